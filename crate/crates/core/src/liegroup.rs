//! SE(3) primitives used by the rod and rigid-chain kinematics.
//!
//! Twists are stored as 6-vectors ordered `(angular, linear)`. The same layout
//! is used for rod strains `(k, u)`, body velocities, and (dually) wrenches
//! `(moment, force)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle the exponential uses its Taylor expansion.
pub const EXP_SERIES_EPS: f64 = 1e-6;

/// Angles closer than this to pi are rejected by [`log_se3`].
pub const LOG_PI_MARGIN: f64 = 1e-3;

/// Below this angle the tangent-map coefficients switch to their series form.
const TANGENT_SERIES_EPS: f64 = 0.2;

/// Rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            position,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            position: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` about a unit `axis`, no translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(rotation_about(axis, angle))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            position: -(rt * self.position),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Checks `RᵀR = I` and `det R = 1` to `tol`, plus finiteness.
    pub fn is_valid(&self, tol: f64) -> bool {
        let finite = self.rotation.iter().chain(self.position.iter()).all(|v| v.is_finite());
        finite
            && (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.position.iter()).all(|v| v.is_finite())
    }

    /// Projects the rotation back onto SO(3) (polar decomposition via SVD).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Self {
            rotation: r,
            position: self.position,
        }
    }

    /// Frobenius distance between homogeneous matrices.
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.matrix() - other.matrix()).norm()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            position: self.rotation * rhs.position + self.position,
        }
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &'a Pose) -> Pose {
        *self * *rhs
    }
}

/// Element of se(3) stored as `(angular, linear)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist(pub Vector6<f64>);

/// Spatial velocity of a frame expressed in that frame; same layout as [`Twist`].
pub type SpatialVelocity = Twist;

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self(Vector6::new(
            angular.x, angular.y, angular.z, linear.x, linear.y, linear.z,
        ))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self(Vector6::from_column_slice(v))
    }

    pub fn angular(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn linear(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues rotation about a unit axis.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `(sin θ/θ, (1 − cos θ)/θ², (θ − sin θ)/θ³)` with a 4th-order series near zero.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta <= EXP_SERIES_EPS {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Closed-form `exp(s·[ξ×])`.
pub fn exp_se3(xi: &Twist, s: f64) -> Result<Pose> {
    if !xi.is_finite() || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "exp_se3 got non-finite input (xi = {:?}, s = {s})",
            xi.0.as_slice()
        )));
    }
    if s < 0.0 {
        return Err(Error::InvalidArgument(format!("exp_se3 length must be >= 0, got {s}")));
    }
    Ok(exp_unchecked(&xi.scaled(s)))
}

pub(crate) fn exp_unchecked(x: &Twist) -> Pose {
    let w = x.angular();
    let v = x.linear();
    let theta = w.norm();
    let (a, b, c) = exp_coefficients(theta);
    let k = skew(&w);
    let k2 = k * k;
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let left = Matrix3::identity() + k * b + k2 * c;
    Pose {
        rotation,
        position: left * v,
    }
}

/// Inverse of [`exp_se3`] at unit length.
pub fn log_se3(h: &Pose) -> Result<Twist> {
    if !h.is_finite() {
        return Err(Error::InvalidArgument("log_se3 got a non-finite pose".into()));
    }
    let r = &h.rotation;
    let axis2 = vee(&(r - r.transpose()));
    let sin_t = 0.5 * axis2.norm();
    let cos_t = 0.5 * (r.trace() - 1.0);
    let theta = sin_t.atan2(cos_t);
    if theta > std::f64::consts::PI - LOG_PI_MARGIN {
        return Err(Error::IllConditioned(format!(
            "rotation angle {theta:.6} rad is within {LOG_PI_MARGIN} of pi"
        )));
    }
    // θ / (2 sin θ)
    let scale = if theta < 1e-4 {
        0.5 * (1.0 + theta * theta / 6.0 + 7.0 * theta.powi(4) / 360.0)
    } else {
        0.5 * theta / theta.sin()
    };
    let w = axis2 * scale;
    let k = skew(&w);
    // V⁻¹ = I − ½[ω] + c [ω]²
    let c = if theta < 1e-3 {
        1.0 / 12.0 + theta * theta / 720.0 + theta.powi(4) / 30240.0
    } else {
        let (s, co) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - co))) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * c;
    Ok(Twist::new(w, v_inv * h.position))
}

/// `Ad_H` acting on `(angular, linear)` twists.
pub fn adjoint(h: &Pose) -> Matrix6<f64> {
    let r = &h.rotation;
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&h.position) * r));
    m
}

/// `Ad_{H⁻¹}`, computed without forming the inverse pose.
pub fn adjoint_inv(h: &Pose) -> Matrix6<f64> {
    let rt = h.rotation.transpose();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(rt * skew(&h.position))));
    m
}

/// Small adjoint `ad_ξ`, so that `ad_ξ η` is the Lie bracket `[ξ, η]`.
pub fn ad(xi: &Twist) -> Matrix6<f64> {
    let w = skew(&xi.angular());
    let v = skew(&xi.linear());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    m
}

/// `ad_a b` without building the matrix.
pub fn bracket(a: &Vector6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let (wa, va) = (a.fixed_rows::<3>(0), a.fixed_rows::<3>(3));
    let (wb, vb) = (b.fixed_rows::<3>(0), b.fixed_rows::<3>(3));
    let w = wa.cross(&wb);
    let v = wa.cross(&vb) + va.cross(&wb);
    Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

/// `ad_aᵀ f` for a wrench `f = (moment, force)`.
pub fn bracket_dual(a: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (wa, va) = (a.fixed_rows::<3>(0), a.fixed_rows::<3>(3));
    let (m, n) = (f.fixed_rows::<3>(0), f.fixed_rows::<3>(3));
    let mo = -(wa.cross(&m) + va.cross(&n));
    let fo = -wa.cross(&n);
    Vector6::new(mo.x, mo.y, mo.z, fo.x, fo.y, fo.z)
}

/// Right-trivialised tangent of the exponential:
/// `exp(X)⁻¹ d exp(X) = T(X) dX`, with `T(X) = Σ (−ad_X)ᵏ/(k+1)!`.
pub fn right_jacobian(x: &Twist) -> Matrix6<f64> {
    let theta = x.angular().norm();
    let (a1, a2, a3, a4) = tangent_coefficients(theta);
    let a = ad(x);
    let a_2 = a * a;
    let a_3 = a_2 * a;
    let a_4 = a_3 * a;
    Matrix6::identity() + a * a1 + a_2 * a2 + a_3 * a3 + a_4 * a4
}

fn tangent_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    if theta < TANGENT_SERIES_EPS {
        tangent_coefficients_series(theta)
    } else {
        tangent_coefficients_closed(theta)
    }
}

fn tangent_coefficients_series(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    let t4 = t2 * t2;
    let t6 = t4 * t2;
    let t8 = t4 * t4;
    (
        -0.5 + t4 / 720.0 - t6 / 20160.0 + t8 / 1_209_600.0,
        1.0 / 6.0 - t4 / 5040.0 + t6 / 181_440.0 - t8 / 13_305_600.0,
        -1.0 / 24.0 + t2 / 360.0 - t4 / 13440.0 + t6 / 907_200.0 - t8 / 95_800_320.0,
        1.0 / 120.0 - t2 / 2520.0 + t4 / 120_960.0 - t6 / 9_979_200.0 + t8 / 1_245_404_160.0,
    )
}

fn tangent_coefficients_closed(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    let (s, c) = theta.sin_cos();
    (
        (theta * s + 4.0 * c - 4.0) / (2.0 * t2),
        (theta * (c + 4.0) - 5.0 * s) / (2.0 * t2 * theta),
        (0.5 * theta * s + c - 1.0) / (t2 * t2),
        (theta * (c + 2.0) - 3.0 * s) / (2.0 * t2 * t2 * theta),
    )
}

/// Second-order term of the exponential: `(D T(X)[Y]) Y`.
///
/// Appears in the acceleration of a frame `exp(X(t))` as `d/dt(T(X)) Ẋ`
/// with `Y = Ẋ`. Evaluated from the power series of `T`, truncated once the
/// terms drop below round-off.
pub fn right_jacobian_derivative(x: &Twist, y: &Twist) -> Vector6<f64> {
    let a = x.0;
    let scale = y.0.norm();
    if scale == 0.0 {
        return Vector6::zeros();
    }
    // T(X) = Σ_k c_k ad_X^k, c_k = (−1)^k/(k+1)!
    // D T[Y] Y = Σ_{k≥1} c_k Σ_{j<k} ad_X^j ad_Y ad_X^{k−1−j} Y
    //          = Σ_m Σ_j c_{m+j+1} ad_X^j u_m,  u_m = ad_Y ad_X^m Y
    const MAX_TERMS: usize = 60;
    let mut coeff = [0.0f64; MAX_TERMS + 2];
    let mut fact = 1.0;
    for (k, c) in coeff.iter_mut().enumerate() {
        fact *= (k + 1) as f64;
        *c = if k % 2 == 0 { 1.0 } else { -1.0 } / fact;
    }
    let norm_x = a.norm().max(1e-300);
    // Number of terms needed for ‖X‖ᵏ/k! to fall below 1e-18.
    let mut terms = 2;
    let mut mag = 1.0;
    while terms < MAX_TERMS {
        mag *= norm_x / terms as f64;
        if mag < 1e-18 && terms as f64 > norm_x {
            break;
        }
        terms += 1;
    }
    let mut w = y.0;
    let mut u = Vec::with_capacity(terms);
    for _ in 0..terms {
        u.push(bracket(&y.0, &w));
        w = bracket(&a, &w);
    }
    let mut out = Vector6::zeros();
    for (m, um) in u.iter().enumerate() {
        // Horner in ad_X over j with coefficients c_{m+j+1}.
        let jmax = terms.saturating_sub(m + 1);
        let mut acc = Vector6::zeros();
        for j in (0..jmax).rev() {
            acc = bracket(&a, &acc) + um * coeff[m + j + 1];
        }
        out += acc;
    }
    out
}
