//! Piece-wise constant strain (PCS) rod: a Cosserat rod split into segments
//! that each carry one constant strain twist `ξ = (k, u)`.
//!
//! The cross-section frame at arclength `s` inside segment `i` is
//! `H(s) = H_{i-1} · exp((s − L_{i-1}) ξ_i)`, so the whole shape follows from
//! chaining per-segment exponentials from the root.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{adjoint_inv, exp_unchecked, right_jacobian, Pose, Twist};
use crate::quadrature::GaussLegendre;

/// Quadrature points per segment used for distributed inertia.
pub const INERTIA_QUADRATURE_POINTS: usize = 5;

const ARCLENGTH_TOL: f64 = 1e-12;

/// Strongly curved segments are split into panels turning at most this
/// many radians, each integrated with the same rule.
const MAX_PANEL_TURN: f64 = 1.5;
/// Upper bound on panels, reached only by wildly bent (diverging) states.
const MAX_PANELS: usize = 64;

/// Which of the six strain components are generalized coordinates.
/// Inactive components stay at their rest value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrainMask(pub [bool; 6]);

impl Default for StrainMask {
    fn default() -> Self {
        Self::all()
    }
}

impl StrainMask {
    pub fn all() -> Self {
        Self([true; 6])
    }

    /// In-plane bending, axial stretch and in-plane shear: `(k_z, u_x, u_y)`.
    pub fn planar() -> Self {
        Self([false, false, true, true, true, false])
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..6).filter(|&i| self.0[i]).collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// m
    pub length: f64,
    /// kg/m
    pub linear_density: f64,
    /// Cross-section rotational inertia per unit length, kg·m.
    pub rotational_inertia_density: Matrix3<f64>,
    pub rest_strain: Twist,
    pub stiffness: Matrix6<f64>,
    pub damping: Matrix6<f64>,
}

impl SegmentSpec {
    pub fn mass(&self) -> f64 {
        self.linear_density * self.length
    }

    /// Spatial inertia per unit length at the cross-section frame.
    pub fn density_inertia(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotational_inertia_density);
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * self.linear_density));
        m
    }

    fn validate(&self, index: usize) -> Result<()> {
        let ctx = |msg: &str| Error::Model(format!("rod segment {index}: {msg}"));
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(ctx("length must be positive"));
        }
        if !(self.linear_density >= 0.0) {
            return Err(ctx("linear density must be non-negative"));
        }
        if !is_symmetric_psd(&DMatrix::from_column_slice(3, 3, self.rotational_inertia_density.as_slice())) {
            return Err(ctx("cross-section inertia must be symmetric PSD"));
        }
        if !is_symmetric_psd(&DMatrix::from_column_slice(6, 6, self.stiffness.as_slice())) {
            return Err(ctx("stiffness must be symmetric PSD"));
        }
        if !is_symmetric_psd(&DMatrix::from_column_slice(6, 6, self.damping.as_slice())) {
            return Err(ctx("damping must be symmetric PSD"));
        }
        if !(self.rest_strain.0[3] > 0.0) || !self.rest_strain.is_finite() {
            return Err(ctx("rest strain needs a positive axial component"));
        }
        Ok(())
    }
}

/// Full (possibly cross-segment) stiffness and damping, `6N × 6N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RodSpec {
    pub segments: Vec<SegmentSpec>,
    /// Pose of the rod root in the frame of the body it is mounted on.
    pub attachment: Pose,
    #[serde(default)]
    pub active: StrainMask,
    /// Overrides the per-segment blocks when present.
    #[serde(default)]
    pub coupling: Option<Coupling>,
}

impl RodSpec {
    pub fn new(segments: Vec<SegmentSpec>, attachment: Pose) -> Result<Self> {
        let spec = Self {
            segments,
            attachment,
            active: StrainMask::all(),
            coupling: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Model("rod needs at least one segment".into()));
        }
        if !self.attachment.is_valid(1e-9) {
            return Err(Error::Model("rod attachment is not a valid pose".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            seg.validate(i)?;
        }
        if let Some(c) = &self.coupling {
            let n = 6 * self.segments.len();
            if c.stiffness.shape() != (n, n) || c.damping.shape() != (n, n) {
                return Err(Error::Model(format!("coupling matrices must be {n}x{n}")));
            }
            if !is_symmetric_psd(&c.stiffness) || !is_symmetric_psd(&c.damping) {
                return Err(Error::Model("coupling matrices must be symmetric PSD".into()));
            }
        }
        if self.active.count() == 0 {
            return Err(Error::Model("rod has no active strain components".into()));
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Number of generalized coordinates contributed to the dynamics.
    pub fn dof(&self) -> usize {
        self.segments.len() * self.active.count()
    }

    /// `L_0 = 0 < L_1 < … < L_N`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for seg in &self.segments {
            acc += seg.length;
            out.push(acc);
        }
        out
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.segments.iter().map(SegmentSpec::mass).sum()
    }

    pub fn rest_state(&self) -> RodState {
        RodState {
            strains: self.segments.iter().map(|s| s.rest_strain).collect(),
            strain_rates: vec![Twist::zero(); self.segments.len()],
        }
    }

    pub fn rest_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            6 * self.segments.len(),
            self.segments.iter().flat_map(|s| s.rest_strain.0.iter().copied()),
        )
    }

    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        match &self.coupling {
            Some(c) => c.stiffness.clone(),
            None => block_diagonal(self.segments.iter().map(|s| &s.stiffness)),
        }
    }

    pub fn damping_matrix(&self) -> DMatrix<f64> {
        match &self.coupling {
            Some(c) => c.damping.clone(),
            None => block_diagonal(self.segments.iter().map(|s| &s.damping)),
        }
    }

    /// Copy with `K` scaled by `factor` (and `D` by `damping_factor`).
    pub fn scaled(&self, factor: f64, damping_factor: f64) -> Self {
        let mut out = self.clone();
        for seg in &mut out.segments {
            seg.stiffness *= factor;
            seg.damping *= damping_factor;
        }
        if let Some(c) = &mut out.coupling {
            c.stiffness *= factor;
            c.damping *= damping_factor;
        }
        out
    }

    /// Segment index and local offset `x = s − L_{i-1}` for arclength `s`.
    pub fn locate(&self, s: f64) -> Result<(usize, f64)> {
        let total = self.total_length();
        if !(s >= -ARCLENGTH_TOL && s <= total + ARCLENGTH_TOL) {
            return Err(Error::Domain(format!(
                "arclength {s} outside rod [0, {total}]"
            )));
        }
        let s = s.clamp(0.0, total);
        let mut start = 0.0;
        let last = self.segments.len() - 1;
        for (i, seg) in self.segments.iter().enumerate() {
            if s < start + seg.length || i == last {
                return Ok((i, (s - start).clamp(0.0, seg.length)));
            }
            start += seg.length;
        }
        unreachable!()
    }

    fn check_state(&self, state: &RodState) -> Result<()> {
        let n = self.segments.len();
        if state.strains.len() != n || state.strain_rates.len() != n {
            return Err(Error::InvalidArgument(format!(
                "rod state has {}/{} entries, rod has {n} segments",
                state.strains.len(),
                state.strain_rates.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RodState {
    pub strains: Vec<Twist>,
    pub strain_rates: Vec<Twist>,
}

impl RodState {
    pub fn strain_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            6 * self.strains.len(),
            self.strains.iter().flat_map(|s| s.0.iter().copied()),
        )
    }

    pub fn rate_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            6 * self.strain_rates.len(),
            self.strain_rates.iter().flat_map(|s| s.0.iter().copied()),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.strains
            .iter()
            .chain(&self.strain_rates)
            .all(Twist::is_finite)
    }
}

/// Pose of the cross-section at offset `x` inside a segment with strain `xi`,
/// relative to the segment root, with its velocity transport operators.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SegmentTransport {
    pub pose: Pose,
    /// `Ad_{g⁻¹}`: carries the segment-root velocity to the cross-section.
    pub ad_inv: Matrix6<f64>,
    /// `x · T(x ξ)`: maps the strain rate to cross-section velocity.
    pub tangent: Matrix6<f64>,
}

pub(crate) fn segment_transport(xi: &Twist, x: f64) -> SegmentTransport {
    let xs = xi.scaled(x);
    let pose = exp_unchecked(&xs);
    SegmentTransport {
        pose,
        ad_inv: adjoint_inv(&pose),
        tangent: right_jacobian(&xs) * x,
    }
}

/// Boundary poses `H_0 … H_N` of a rod.
#[derive(Clone, Debug, PartialEq)]
pub struct RodKinematics {
    pub boundaries: Vec<Pose>,
    arclengths: Vec<f64>,
    strains: Vec<Twist>,
}

impl RodKinematics {
    pub fn base(&self) -> &Pose {
        &self.boundaries[0]
    }

    pub fn tip(&self) -> &Pose {
        self.boundaries.last().expect("rod has at least one boundary")
    }

    /// Cross-section pose at arclength `s`.
    pub fn query(&self, s: f64) -> Result<Pose> {
        let total = *self.arclengths.last().unwrap();
        if !(s >= -ARCLENGTH_TOL && s <= total + ARCLENGTH_TOL) {
            return Err(Error::Domain(format!(
                "arclength {s} outside rod [0, {total}]"
            )));
        }
        let s = s.clamp(0.0, total);
        let n = self.strains.len();
        let i = (0..n)
            .find(|&i| s < self.arclengths[i + 1])
            .unwrap_or(n - 1);
        let x = s - self.arclengths[i];
        Ok(self.boundaries[i] * exp_unchecked(&self.strains[i].scaled(x)))
    }
}

/// Chains the per-segment exponentials starting at `root ∘ attachment`.
pub fn rod_forward_kinematics(spec: &RodSpec, state: &RodState, root: &Pose) -> Result<RodKinematics> {
    spec.check_state(state)?;
    if let Some(bad) = state.strains.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("segment {bad} strain is not finite")));
    }
    let mut boundaries = Vec::with_capacity(spec.segments.len() + 1);
    let mut h = *root * spec.attachment;
    boundaries.push(h);
    for (seg, xi) in spec.segments.iter().zip(&state.strains) {
        h = h * exp_unchecked(&xi.scaled(seg.length));
        boundaries.push(h);
    }
    Ok(RodKinematics {
        boundaries,
        arclengths: spec.boundaries(),
        strains: state.strains.clone(),
    })
}

/// Body-frame Jacobian of the cross-section at `s`.
///
/// `root_jacobian` (6×r) maps some upstream velocity vector to the body
/// velocity of the rod's root frame (before the attachment offset). The
/// result is `6 × (r + 6N)`: the upstream columns followed by one 6-column
/// block per segment strain rate.
pub fn rod_point_jacobian(
    spec: &RodSpec,
    state: &RodState,
    root_jacobian: &DMatrix<f64>,
    s: f64,
) -> Result<DMatrix<f64>> {
    spec.check_state(state)?;
    if root_jacobian.nrows() != 6 {
        return Err(Error::InvalidArgument("root jacobian must have 6 rows".into()));
    }
    let (target, x_target) = spec.locate(s)?;
    let r = root_jacobian.ncols();
    let n = spec.segments.len();
    let mut jac = DMatrix::zeros(6, r + 6 * n);
    jac.columns_mut(0, r)
        .copy_from(&(DMatrix::from_column_slice(6, 6, adjoint_inv(&spec.attachment).as_slice()) * root_jacobian));
    for i in 0..=target {
        let x = if i == target { x_target } else { spec.segments[i].length };
        let tr = segment_transport(&state.strains[i], x);
        let ad = DMatrix::from_column_slice(6, 6, tr.ad_inv.as_slice());
        jac = &ad * &jac;
        jac.columns_mut(r + 6 * i, 6)
            .copy_from(&DMatrix::from_column_slice(6, 6, tr.tangent.as_slice()));
    }
    Ok(jac)
}

/// Spatial inertia of one segment about (and expressed in) its root frame.
pub fn segment_inertia(spec: &SegmentSpec, xi: &Twist) -> Matrix6<f64> {
    segment_inertia_with(spec, xi, &GaussLegendre::new(INERTIA_QUADRATURE_POINTS))
}

pub fn segment_inertia_with(spec: &SegmentSpec, xi: &Twist, rule: &GaussLegendre) -> Matrix6<f64> {
    let density = spec.density_inertia();
    let mut out = Matrix6::zeros();
    for (x, w) in quadrature_points(spec, xi, rule) {
        let ad = adjoint_inv(&exp_unchecked(&xi.scaled(x)));
        out += ad.transpose() * density * ad * w;
    }
    0.5 * (out + out.transpose())
}

/// Offsets `x` inside the segment and their weights (in metres) for a
/// composite rule: strongly curved segments are split into panels.
pub(crate) fn quadrature_points(spec: &SegmentSpec, xi: &Twist, rule: &GaussLegendre) -> Vec<(f64, f64)> {
    let turn = xi.angular().norm() * spec.length;
    let panels = if turn.is_finite() {
        ((turn / MAX_PANEL_TURN).ceil().max(1.0) as usize).min(MAX_PANELS)
    } else {
        1
    };
    let width = spec.length / panels as f64;
    (0..panels)
        .flat_map(|p| {
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(move |(node, w)| ((p as f64 + node) * width, w * width))
        })
        .collect()
}

/// `τ_S = K (q_eq − q) − D q̇`, length `6N`.
pub fn viscoelastic_force(spec: &RodSpec, state: &RodState) -> Result<DVector<f64>> {
    spec.check_state(state)?;
    let dq = spec.rest_vector() - state.strain_vector();
    let rates = state.rate_vector();
    match &spec.coupling {
        Some(c) => Ok(&c.stiffness * dq - &c.damping * rates),
        None => {
            let mut out = DVector::zeros(dq.len());
            for (i, seg) in spec.segments.iter().enumerate() {
                let d = dq.fixed_rows::<6>(6 * i);
                let v = rates.fixed_rows::<6>(6 * i);
                out.fixed_rows_mut::<6>(6 * i)
                    .copy_from(&(seg.stiffness * d - seg.damping * v));
            }
            Ok(out)
        }
    }
}

/// `½ (q_eq − q)ᵀ K (q_eq − q)`.
pub fn elastic_energy(spec: &RodSpec, state: &RodState) -> f64 {
    let dq = spec.rest_vector() - state.strain_vector();
    match &spec.coupling {
        Some(c) => 0.5 * dq.dot(&(&c.stiffness * &dq)),
        None => spec
            .segments
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let d: Vector6<f64> = dq.fixed_rows::<6>(6 * i).into_owned();
                0.5 * d.dot(&(seg.stiffness * d))
            })
            .sum(),
    }
}

/// Quasi-static shape of a clamped rod under a world-frame force at its tip.
///
/// Solves `K (q − q_eq) = Jᵀ(q) W(q)` over the active strain components by
/// under-relaxed fixed-point iteration.
pub fn static_deflection(spec: &RodSpec, tip_force: &Vector3<f64>) -> Result<RodState> {
    let active = spec.active.active_indices();
    let n = spec.segments.len();
    let idx: Vec<usize> = (0..n)
        .flat_map(|i| active.iter().map(move |&c| 6 * i + c))
        .collect();
    let k_full = spec.stiffness_matrix();
    let k = k_full.select_rows(&idx).select_columns(&idx);
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("active stiffness is singular".into()))?;
    let rest = spec.rest_vector();
    let mut state = spec.rest_state();
    let empty = DMatrix::zeros(6, 0);
    let total = spec.total_length();
    for _ in 0..500 {
        let kin = rod_forward_kinematics(spec, &state, &Pose::identity())?;
        let jac = rod_point_jacobian(spec, &state, &empty, total)?;
        let f_body = kin.tip().rotation.transpose() * tip_force;
        let wrench = Vector6::new(0.0, 0.0, 0.0, f_body.x, f_body.y, f_body.z);
        let gen = jac.transpose() * DVector::from_column_slice(wrench.as_slice());
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&j| gen[j]));
        let delta = chol.solve(&rhs);
        let mut q = state.strain_vector();
        let mut change: f64 = 0.0;
        for (a, &j) in idx.iter().enumerate() {
            let target = rest[j] + delta[a];
            let next = q[j] + 0.5 * (target - q[j]);
            change = change.max((next - q[j]).abs());
            q[j] = next;
        }
        for (i, xi) in state.strains.iter_mut().enumerate() {
            xi.0.copy_from(&q.fixed_rows::<6>(6 * i));
        }
        if change < 1e-13 {
            return Ok(state);
        }
    }
    Err(Error::Numerical("static deflection did not converge".into()))
}

fn block_diagonal<'a>(blocks: impl ExactSizeIterator<Item = &'a Matrix6<f64>>) -> DMatrix<f64> {
    let n = blocks.len();
    let mut out = DMatrix::zeros(6 * n, 6 * n);
    for (i, b) in blocks.enumerate() {
        out.view_mut((6 * i, 6 * i), (6, 6))
            .copy_from(&DMatrix::from_column_slice(6, 6, b.as_slice()));
    }
    out
}

pub(crate) fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().all(|&l| l >= -1e-9 * scale)
}

/// Slender straight segment with isotropic-ish defaults, used by tests and
/// the toy models.
pub fn uniform_segment(length: f64, linear_density: f64, bending: f64, damping: f64) -> SegmentSpec {
    let stiffness = Matrix6::from_diagonal(&Vector6::new(
        bending, bending, bending, 50.0 * bending, 50.0 * bending, 50.0 * bending,
    ));
    SegmentSpec {
        length,
        linear_density,
        rotational_inertia_density: Matrix3::identity() * (1e-5 * linear_density),
        rest_strain: Twist(Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0)),
        stiffness,
        damping: Matrix6::identity() * damping,
    }
}
