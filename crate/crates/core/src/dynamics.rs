//! Hybrid floating-base dynamics `M ν̇ + b = τ + Σ J_cᵀ f_c` over the
//! generalized velocity `ν = [η₀; q̇_R; q̇_S]`, with penalty ground contact
//! and a semi-implicit Euler integrator (implicit in the rod's linear
//! viscoelastic force and in the contact springs).
//!
//! `M` and `b` are assembled by summing `Jᵀ Λ J` and `Jᵀ(Λ J̇ν − ad_Vᵀ Λ V − F_g)`
//! over rigid bodies and rod quadrature points, all in their own frames.
//! Only the active strain components of the rod are coordinates.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{adjoint_inv, bracket, bracket_dual, exp_unchecked, right_jacobian_derivative, Pose, Twist};
use crate::model::{BaseMode, HybridModel, HybridState, Side};
use crate::quadrature::GaussLegendre;
use crate::rod::{quadrature_points, segment_transport, INERTIA_QUADRATURE_POINTS};
use crate::skeleton::{propagate_chain, world_point_jacobian, ChainFrame, PointHost};

/// Inner integration step, s.
pub const DEFAULT_DT: f64 = 1.0 / 1200.0;

/// Generalized force split by coordinate block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedForce {
    /// Base wrench in the base frame; only the pelvis stabilizer may set it.
    pub base: Vector6<f64>,
    pub rigid: DVector<f64>,
    /// Full `6N` strain force; inactive components are ignored.
    pub rod: DVector<f64>,
}

impl GeneralizedForce {
    pub fn zeros(model: &HybridModel) -> Self {
        Self {
            base: Vector6::zeros(),
            rigid: DVector::zeros(model.num_joints()),
            rod: DVector::zeros(6 * model.rod.as_ref().map_or(0, |r| r.num_segments())),
        }
    }

    /// Packs into a length-`nv` vector (active strain components only).
    pub fn to_vector(&self, model: &HybridModel) -> DVector<f64> {
        let mut out = DVector::zeros(model.nv());
        out.fixed_rows_mut::<6>(0).copy_from(&self.base);
        out.rows_mut(6, self.rigid.len()).copy_from(&self.rigid);
        for (k, idx) in strain_indices(model).into_iter().enumerate() {
            out[model.rod_offset() + k] = self.rod[idx];
        }
        out
    }

    pub fn from_vector(model: &HybridModel, v: &DVector<f64>) -> Self {
        let mut out = Self::zeros(model);
        out.base.copy_from(&v.fixed_rows::<6>(0));
        out.rigid.copy_from(&v.rows(6, model.num_joints()));
        for (k, idx) in strain_indices(model).into_iter().enumerate() {
            out.rod[idx] = v[model.rod_offset() + k];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.base.iter().chain(self.rigid.iter()).chain(self.rod.iter()).all(|v| v.is_finite())
    }
}

/// Index into the full `6N` strain vector of every active coordinate.
pub fn strain_indices(model: &HybridModel) -> Vec<usize> {
    let Some(rod) = &model.rod else {
        return vec![];
    };
    let active = rod.active.active_indices();
    (0..rod.num_segments())
        .flat_map(|i| active.iter().map(move |&c| 6 * i + c))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactForce {
    pub name: String,
    pub side: Side,
    pub position: Vector3<f64>,
    /// Vertical (normal) force, N, never negative.
    pub normal: f64,
    /// Horizontal force in world frame, N.
    pub tangential: Vector3<f64>,
    pub active: bool,
    /// `J_cᵀ f_c` over the generalized velocity.
    #[serde(skip)]
    pub generalized: DVector<f64>,
}

impl ContactForce {
    pub fn world_force(&self) -> Vector3<f64> {
        Vector3::new(self.tangential.x, self.normal, self.tangential.z)
    }
}

/// Generalized velocity `[η₀; q̇_R; active q̇_S]`.
pub fn generalized_velocity(model: &HybridModel, state: &HybridState) -> DVector<f64> {
    let mut v = DVector::zeros(model.nv());
    v.fixed_rows_mut::<6>(0).copy_from(&state.base_velocity.0);
    v.rows_mut(6, state.qd.len()).copy_from_slice(&state.qd);
    let rates = state.rod.rate_vector();
    for (k, idx) in strain_indices(model).into_iter().enumerate() {
        v[model.rod_offset() + k] = rates[idx];
    }
    v
}

fn set_generalized_velocity(model: &HybridModel, state: &mut HybridState, v: &DVector<f64>) {
    state.base_velocity = Twist(v.fixed_rows::<6>(0).into_owned());
    let n = state.qd.len();
    state.qd.copy_from_slice(v.rows(6, n).as_slice());
    for (k, idx) in strain_indices(model).into_iter().enumerate() {
        state.rod.strain_rates[idx / 6].0[idx % 6] = v[model.rod_offset() + k];
    }
}

/// A frame with inertia: rigid body or rod quadrature point.
struct MassFrame {
    frame: ChainFrame,
    inertia: Matrix6<f64>,
    mass: f64,
    /// Centre of mass in the frame.
    com: Vector3<f64>,
}

/// All frames of the model at one state, relative to the base.
struct Snapshot {
    bodies: Vec<ChainFrame>,
    /// Rod frames at segment starts `H_0 … H_{N-1}` and the tip `H_N`.
    rod_boundaries: Vec<ChainFrame>,
    masses: Vec<MassFrame>,
}

fn transport_rod(
    model: &HybridModel,
    state: &HybridState,
    prev: &ChainFrame,
    segment: usize,
    x: f64,
) -> ChainFrame {
    let rod = model.rod.as_ref().expect("caller checked rod");
    let xi = state.rod.strains[segment];
    let xid = state.rod.strain_rates[segment];
    let tr = segment_transport(&xi, x);
    let ncols = prev.jac.ncols();
    let mut jac = DMatrix::zeros(6, ncols);
    for &c in &prev.support {
        let col = tr.ad_inv * prev.jac.fixed_view::<6, 1>(0, c);
        jac.fixed_view_mut::<6, 1>(0, c).copy_from(&col);
    }
    let mut support = prev.support.clone();
    let active = rod.active.active_indices();
    let base_col = model.rod_offset() + segment * active.len();
    for (k, &comp) in active.iter().enumerate() {
        jac.fixed_view_mut::<6, 1>(0, base_col + k)
            .copy_from(&tr.tangent.column(comp));
        support.push(base_col + k);
    }
    let psi = tr.tangent * xid.0;
    let velocity = tr.ad_inv * prev.velocity + psi;
    let bias = tr.ad_inv * prev.bias
        + bracket(&velocity, &psi)
        + right_jacobian_derivative(&xi.scaled(x), &xid.scaled(x));
    ChainFrame {
        pose: prev.pose * tr.pose,
        jac,
        support,
        velocity,
        bias,
    }
}

impl Snapshot {
    fn new(model: &HybridModel, state: &HybridState) -> Result<Self> {
        model.check_state(state)?;
        if !state.is_finite() {
            return Err(Error::InvalidArgument("state is not finite".into()));
        }
        let nv = model.nv();
        let bodies = propagate_chain(&model.skeleton, &state.q, &state.qd, &state.base_velocity.0, nv);
        let mut masses: Vec<MassFrame> = model
            .skeleton
            .bodies
            .iter()
            .zip(&bodies)
            .map(|(b, f)| MassFrame {
                frame: f.clone(),
                inertia: b.spatial_inertia(),
                mass: b.mass,
                com: b.com,
            })
            .collect();
        let mut rod_boundaries = Vec::new();
        if let (Some(rod), Some((socket, mount))) = (&model.rod, model.rod_mount()) {
            let parent = &bodies[socket];
            let ad = adjoint_inv(&mount);
            let mut jac = DMatrix::zeros(6, nv);
            for &c in &parent.support {
                let col = ad * parent.jac.fixed_view::<6, 1>(0, c);
                jac.fixed_view_mut::<6, 1>(0, c).copy_from(&col);
            }
            rod_boundaries.push(ChainFrame {
                pose: parent.pose * mount,
                jac,
                support: parent.support.clone(),
                velocity: ad * parent.velocity,
                bias: ad * parent.bias,
            });
            let rule = GaussLegendre::new(INERTIA_QUADRATURE_POINTS);
            for (i, seg) in rod.segments.iter().enumerate() {
                let start = rod_boundaries[i].clone();
                let density = seg.density_inertia();
                for (x, w) in quadrature_points(seg, &state.rod.strains[i], &rule) {
                    masses.push(MassFrame {
                        frame: transport_rod(model, state, &start, i, x),
                        inertia: density * w,
                        mass: seg.linear_density * w,
                        com: Vector3::zeros(),
                    });
                }
                rod_boundaries.push(transport_rod(model, state, &start, i, seg.length));
            }
        }
        Ok(Self {
            bodies,
            rod_boundaries,
            masses,
        })
    }

    /// Frame hosting a point, with the point in that frame.
    fn host_frame(&self, model: &HybridModel, state: &HybridState, host: &PointHost) -> Result<(ChainFrame, Vector3<f64>)> {
        match host {
            PointHost::Body { body, point } => Ok((self.bodies[*body].clone(), *point)),
            PointHost::Rod { s } => {
                let rod = model
                    .rod
                    .as_ref()
                    .ok_or_else(|| Error::Model("rod point on a model without rod".into()))?;
                let (i, x) = rod.locate(*s)?;
                Ok((transport_rod(model, state, &self.rod_boundaries[i], i, x), Vector3::zeros()))
            }
        }
    }

    fn mass_matrix(&self, nv: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(nv, nv);
        let mut cols: Vec<Vector6<f64>> = Vec::new();
        let mut weighted: Vec<Vector6<f64>> = Vec::new();
        for mf in &self.masses {
            let sup = &mf.frame.support;
            cols.clear();
            weighted.clear();
            for &c in sup {
                let j: Vector6<f64> = mf.frame.jac.fixed_view::<6, 1>(0, c).into_owned();
                weighted.push(mf.inertia * j);
                cols.push(j);
            }
            for (a, &ia) in sup.iter().enumerate() {
                for (b, &ib) in sup.iter().enumerate().skip(a) {
                    let v = cols[a].dot(&weighted[b]);
                    m[(ia, ib)] += v;
                    if ia != ib {
                        m[(ib, ia)] += v;
                    }
                }
            }
        }
        m
    }

    fn bias(&self, base: &Pose, gravity: &Vector3<f64>, nv: usize) -> DVector<f64> {
        let mut b = DVector::zeros(nv);
        for mf in &self.masses {
            let f = &mf.frame;
            let rot = base.rotation * f.pose.rotation;
            let fg = rot.transpose() * gravity * mf.mass;
            let grav = Vector6::new(0.0, 0.0, 0.0, fg.x, fg.y, fg.z);
            let mut gw = grav;
            gw.fixed_rows_mut::<3>(0).copy_from(&mf.com.cross(&fg));
            let h = mf.inertia * f.velocity;
            let w = mf.inertia * f.bias - bracket_dual(&f.velocity, &h) - gw;
            for &c in &f.support {
                b[c] += f.jac.fixed_view::<6, 1>(0, c).dot(&w);
            }
        }
        b
    }
}

/// Spatial inertia `M(q)`, `nv × nv`.
pub fn mass_matrix(model: &HybridModel, state: &HybridState) -> Result<DMatrix<f64>> {
    Ok(Snapshot::new(model, state)?.mass_matrix(model.nv()))
}

/// Coriolis, centrifugal and gravity terms `b(q, ν)`.
pub fn bias_vector(model: &HybridModel, state: &HybridState, gravity: &Vector3<f64>) -> Result<DVector<f64>> {
    Ok(Snapshot::new(model, state)?.bias(&state.base, gravity, model.nv()))
}

/// Penalty forces at every declared contact point.
pub fn contact_forces(model: &HybridModel, state: &HybridState, ground_height: f64) -> Result<Vec<ContactForce>> {
    let snap = Snapshot::new(model, state)?;
    contacts_from(&snap, model, state, ground_height)
}

/// Kinematics of one contact point: world position, velocity and the world
/// linear-velocity Jacobian (3 × nv).
struct ContactPoint {
    position: Vector3<f64>,
    depth: f64,
    velocity: Vector3<f64>,
    jac: DMatrix<f64>,
}

fn contact_points(snap: &Snapshot, model: &HybridModel, state: &HybridState, ground: f64) -> Result<Vec<ContactPoint>> {
    let v = generalized_velocity(model, state);
    model
        .contacts
        .iter()
        .map(|c| {
            let (frame, point) = snap.host_frame(model, state, &c.host)?;
            let world = state.base * frame.pose;
            let position = world.transform_point(&point);
            let jac = world_point_jacobian(&world, &frame.jac, &point).rows(3, 3).into_owned();
            let velocity = Vector3::from_iterator((&jac * &v).iter().copied());
            Ok(ContactPoint {
                position,
                depth: ground - position.y,
                velocity,
                jac,
            })
        })
        .collect()
}

fn contact_record(model: &HybridModel, index: usize, point: &ContactPoint, normal: f64, tangential: Vector3<f64>) -> ContactForce {
    let c = &model.contacts[index];
    let active = normal > 0.0;
    let (normal, tangential) = if active { (normal, tangential) } else { (0.0, Vector3::zeros()) };
    let mut force = ContactForce {
        name: c.name.clone(),
        side: c.side,
        position: point.position,
        normal,
        tangential,
        active,
        generalized: DVector::zeros(model.nv()),
    };
    if active {
        force.generalized = point.jac.transpose() * force.world_force();
    }
    force
}

fn contacts_from(snap: &Snapshot, model: &HybridModel, state: &HybridState, ground: f64) -> Result<Vec<ContactForce>> {
    let p = &model.contact;
    let points = contact_points(snap, model, state, ground)?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, pt)| {
            if pt.depth <= 0.0 {
                return contact_record(model, i, pt, 0.0, Vector3::zeros());
            }
            let normal = (p.k_n * pt.depth - p.d_n * pt.velocity.y).max(0.0);
            let vt = Vector3::new(pt.velocity.x, 0.0, pt.velocity.z);
            let speed = vt.norm();
            let tangential = if speed > 0.0 {
                -vt * ((p.mu * normal).min(p.k_t * speed) / speed)
            } else {
                Vector3::zeros()
            };
            contact_record(model, i, pt, normal, tangential)
        })
        .collect())
}

fn contact_sum(model: &HybridModel, contacts: &[ContactForce]) -> Result<DVector<f64>> {
    let mut sum = DVector::zeros(model.nv());
    for c in contacts {
        if c.generalized.len() != model.nv() {
            return Err(Error::InvalidArgument(format!("contact '{}' has the wrong dimension", c.name)));
        }
        sum += &c.generalized;
    }
    Ok(sum)
}

/// Compensated accumulator (sum and dot products in about twice the working
/// precision).
#[derive(Clone, Copy, Default)]
struct Dot2 {
    sum: f64,
    err: f64,
}

impl Dot2 {
    fn add(&mut self, x: f64) {
        let s = self.sum + x;
        let bp = s - self.sum;
        self.err += (self.sum - (s - bp)) + (x - bp);
        self.sum = s;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.err += a.mul_add(b, -p);
        self.add(p);
    }

    fn value(self) -> f64 {
        self.sum + self.err
    }
}

/// `Σ sign_k v_k + sign_m · m x`, row by row with compensated sums.
fn accurate_affine(m: &DMatrix<f64>, x: &DVector<f64>, sign_m: f64, terms: &[(f64, &DVector<f64>)]) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |i, _| {
        let mut acc = Dot2::default();
        for (sign, v) in terms {
            acc.add(sign * v[i]);
        }
        for j in 0..m.ncols() {
            acc.add_product(sign_m * m[(i, j)], x[j]);
        }
        acc.value()
    })
}

/// Solves `M x = Σ sign_k v_k` on the free block. `M` is badly scaled (light
/// strain modes next to the pelvis), so it is equilibrated before factoring
/// and the answer is refined with compensated residuals.
fn solve(model: &HybridModel, m: DMatrix<f64>, terms: &[(f64, &DVector<f64>)]) -> Result<DVector<f64>> {
    let start = match model.base_mode {
        BaseMode::Floating => 0,
        BaseMode::Fixed => 6,
    };
    let n = model.nv() - start;
    let sub = m.view((start, start), (n, n)).into_owned();
    let scale = DVector::from_fn(n, |i, _| 1.0 / sub[(i, i)].max(f64::MIN_POSITIVE).sqrt());
    let scaled = DMatrix::from_fn(n, n, |i, j| sub[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky().ok_or_else(|| {
        Error::Numerical("mass matrix is not positive definite".into())
    })?;
    let parts: Vec<(f64, DVector<f64>)> = terms.iter().map(|(s, v)| (*s, v.rows(start, n).into_owned())).collect();
    let parts: Vec<(f64, &DVector<f64>)> = parts.iter().map(|(s, v)| (*s, v)).collect();
    let solve_scaled = |r: &DVector<f64>| chol.solve(&r.component_mul(&scale)).component_mul(&scale);
    let mut x = solve_scaled(&accurate_affine(&sub, &DVector::zeros(n), 0.0, &parts));
    for _ in 0..2 {
        let residual = accurate_affine(&sub, &x, -1.0, &parts);
        x += solve_scaled(&residual);
    }
    let mut out = DVector::zeros(model.nv());
    out.rows_mut(start, n).copy_from(&x);
    Ok(out)
}

fn solve_general(model: &HybridModel, a: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let start = match model.base_mode {
        BaseMode::Floating => 0,
        BaseMode::Fixed => 6,
    };
    let n = model.nv() - start;
    let sub = a.view((start, start), (n, n)).into_owned();
    let x = sub
        .lu()
        .solve(&rhs.rows(start, n).into_owned())
        .ok_or_else(|| Error::Numerical("step matrix is singular".into()))?;
    let mut out = DVector::zeros(model.nv());
    out.rows_mut(start, n).copy_from(&x);
    Ok(out)
}

/// Solves `M ν̇ = τ + Σ J_cᵀ f_c − b`. In fixed-base mode the base rows are
/// dropped and `η̇₀ = 0`.
pub fn forward_dynamics(
    model: &HybridModel,
    state: &HybridState,
    tau: &GeneralizedForce,
    contacts: &[ContactForce],
) -> Result<DVector<f64>> {
    let snap = Snapshot::new(model, state)?;
    let m = snap.mass_matrix(model.nv());
    let b = snap.bias(&state.base, &model.gravity, model.nv());
    let tau = tau.to_vector(model);
    let fc = contact_sum(model, contacts)?;
    solve(model, m, &[(1.0, &tau), (1.0, &fc), (-1.0, &b)])
}

/// `τ = M ν̇ + b − Σ J_cᵀ f_c`.
pub fn inverse_dynamics(
    model: &HybridModel,
    state: &HybridState,
    accel: &DVector<f64>,
    contacts: &[ContactForce],
) -> Result<GeneralizedForce> {
    if accel.len() != model.nv() {
        return Err(Error::InvalidArgument(format!(
            "acceleration has {} entries, expected {}",
            accel.len(),
            model.nv()
        )));
    }
    let snap = Snapshot::new(model, state)?;
    let m = snap.mass_matrix(model.nv());
    let b = snap.bias(&state.base, &model.gravity, model.nv());
    let fc = contact_sum(model, contacts)?;
    let tau = accurate_affine(&m, accel, 1.0, &[(1.0, &b), (-1.0, &fc)]);
    Ok(GeneralizedForce::from_vector(model, &tau))
}

/// Result of one integration step.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub accel: DVector<f64>,
    pub contacts: Vec<ContactForce>,
}

/// Active-set passes allowed when resolving contact modes within a step.
const MAX_CONTACT_PASSES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
enum ContactMode {
    Off,
    Stick,
    Slide(Vector3<f64>),
}

/// Advances the state by `dt`.
///
/// Rigid coordinates use semi-implicit Euler: `ν⁺ = ν + dt ν̇`, then the
/// base pose moves by `exp(dt η₀⁺)` and joint angles by `dt q̇_R⁺`. The rod's
/// linear viscoelastic force is taken implicitly (trapezoidal in `K`,
/// backward in `D`, with `q_S⁺ = q_S + dt (q̇_S + q̇_S⁺)/2`), and the penalty
/// contacts are linearised about the predicted positions. Both are needed
/// for stability: the rod has strain modes with very small generalized mass.
///
/// `actuation` carries the stabilizer wrench and joint torques; the rod's
/// viscoelastic force and contact forces are added here.
pub fn step(
    model: &HybridModel,
    state: &HybridState,
    actuation: &GeneralizedForce,
    dt: f64,
) -> Result<(HybridState, StepInfo)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let snap = Snapshot::new(model, state)?;
    let nv = model.nv();
    let h = dt;
    let m = snap.mass_matrix(nv);
    let b = snap.bias(&state.base, &model.gravity, nv);
    let v = generalized_velocity(model, state);
    let off = model.rod_offset();

    // Weight of ν⁺ in the position update: 1 for rigid coordinates, ½ for strains.
    let weight = DVector::from_fn(nv, |i, _| if i >= off { 0.5 } else { 1.0 });
    let mut lhs0 = m.clone();
    let mut rhs0 = &m * &v + (actuation.to_vector(model) - b) * h;
    if let Some(rod) = &model.rod {
        let idx = strain_indices(model);
        let k = rod.stiffness_matrix();
        let d = rod.damping_matrix();
        let ke = &k * (state.rod.strain_vector() - rod.rest_vector());
        for (a, &ia) in idx.iter().enumerate() {
            rhs0[off + a] -= h * ke[ia];
            for (c, &ic) in idx.iter().enumerate() {
                lhs0[(off + a, off + c)] += h * d[(ia, ic)] + 0.25 * h * h * k[(ia, ic)];
                rhs0[off + a] -= 0.25 * h * h * k[(ia, ic)] * v[off + c];
            }
        }
    }

    let p = &model.contact;
    let points = contact_points(&snap, model, state, model.ground_height)?;
    let mut modes: Vec<ContactMode> = points
        .iter()
        .map(|pt| if pt.depth > 0.0 { ContactMode::Stick } else { ContactMode::Off })
        .collect();
    // Normal force as an affine function of ν⁺: N = n0 − g·ν⁺.
    let affine: Vec<(f64, DVector<f64>)> = points
        .iter()
        .map(|pt| {
            let jy = pt.jac.row(1).transpose();
            let lagged = jy.component_mul(&weight.map(|w| 1.0 - w)).dot(&v);
            let n0 = p.k_n * (pt.depth - h * lagged);
            let g = jy.component_mul(&weight) * (p.k_n * h) + &jy * p.d_n;
            (n0, g)
        })
        .collect();

    let mut next_v = v.clone();
    for _ in 0..MAX_CONTACT_PASSES {
        let mut lhs = lhs0.clone();
        let mut rhs = rhs0.clone();
        for ((pt, mode), (n0, g)) in points.iter().zip(&modes).zip(&affine) {
            if *mode == ContactMode::Off {
                continue;
            }
            let jy = pt.jac.row(1).transpose();
            rhs.axpy(h * n0, &jy, 1.0);
            lhs.ger(h, &jy, g, 1.0);
            match mode {
                ContactMode::Stick => {
                    for r in [0, 2] {
                        let jt = pt.jac.row(r).transpose();
                        lhs.ger(h * p.k_t, &jt, &jt, 1.0);
                    }
                }
                ContactMode::Slide(dir) => {
                    let jt = pt.jac.transpose() * dir;
                    rhs.axpy(-p.mu * h * n0, &jt, 1.0);
                    lhs.ger(-p.mu * h, &jt, g, 1.0);
                }
                ContactMode::Off => {}
            }
        }
        next_v = solve_general(model, lhs, rhs)?;
        let mut changed = false;
        for ((pt, mode), (n0, g)) in points.iter().zip(modes.iter_mut()).zip(&affine) {
            if *mode == ContactMode::Off {
                continue;
            }
            let normal = n0 - g.dot(&next_v);
            if normal <= 0.0 {
                *mode = ContactMode::Off;
                changed = true;
                continue;
            }
            let vel = &pt.jac * &next_v;
            let vt = Vector3::new(vel[0], 0.0, vel[2]);
            if *mode == ContactMode::Stick && p.k_t * vt.norm() > p.mu * normal {
                *mode = ContactMode::Slide(vt.normalize());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let contacts: Vec<ContactForce> = points
        .iter()
        .zip(&modes)
        .zip(&affine)
        .enumerate()
        .map(|(i, ((pt, mode), (n0, g)))| {
            let normal = n0 - g.dot(&next_v);
            let tangential = match mode {
                ContactMode::Off => return contact_record(model, i, pt, 0.0, Vector3::zeros()),
                ContactMode::Stick => {
                    let vel = &pt.jac * &next_v;
                    Vector3::new(vel[0], 0.0, vel[2]) * -p.k_t
                }
                ContactMode::Slide(dir) => dir * (-p.mu * normal),
            };
            contact_record(model, i, pt, normal, tangential)
        })
        .collect();

    let mut next = state.clone();
    set_generalized_velocity(model, &mut next, &next_v);
    if model.base_mode == BaseMode::Floating {
        next.base = (state.base * exp_unchecked(&next.base_velocity.scaled(h))).orthonormalized();
    } else {
        next.base_velocity = Twist::zero();
    }
    for (q, qd) in next.q.iter_mut().zip(&next.qd) {
        *q += h * qd;
    }
    for idx in strain_indices(model) {
        let (seg, comp) = (idx / 6, idx % 6);
        let mean = 0.5 * (state.rod.strain_rates[seg].0[comp] + next.rod.strain_rates[seg].0[comp]);
        next.rod.strains[seg].0[comp] += h * mean;
    }
    if model.project_momentum && model.base_mode == BaseMode::Floating && next.is_finite() {
        // The linear block of M is m_total·I in the base frame, so a base
        // velocity change δ shifts the world momentum by m_total·R⁺δ.
        let external = model.gravity * model.total_mass()
            + contacts.iter().map(ContactForce::world_force).sum::<Vector3<f64>>()
            + state.base.rotation * actuation.base.fixed_rows::<3>(3);
        let target = momentum_from(&snap, state).fixed_rows::<3>(3) + external * h;
        let reached = momentum(model, &next)?.fixed_rows::<3>(3).into_owned();
        let delta = next.base.rotation.transpose() * (target - reached) / model.total_mass();
        next.base_velocity.0.fixed_rows_mut::<3>(3).add_assign(&delta);
    }
    let accel = (generalized_velocity(model, &next) - &v) / h;
    if !next.is_finite() || !accel.iter().all(|a| a.is_finite()) {
        return Err(Error::Diverged { time: f64::NAN });
    }
    Ok((next, StepInfo { accel, contacts }))
}

/// Kinetic + gravitational potential + elastic energy, J.
pub fn total_energy(model: &HybridModel, state: &HybridState) -> Result<f64> {
    let snap = Snapshot::new(model, state)?;
    let v = generalized_velocity(model, state);
    let kinetic = 0.5 * v.dot(&(snap.mass_matrix(model.nv()) * &v));
    let mut potential = 0.0;
    for mf in &snap.masses {
        let com = (state.base * mf.frame.pose).transform_point(&mf.com);
        potential -= mf.mass * model.gravity.dot(&com);
    }
    let elastic = model
        .rod
        .as_ref()
        .map_or(0.0, |r| crate::rod::elastic_energy(r, &state.rod));
    Ok(kinetic + potential + elastic)
}

/// Spatial momentum in the world frame about the world origin:
/// `(angular, linear)`.
pub fn momentum(model: &HybridModel, state: &HybridState) -> Result<Vector6<f64>> {
    Ok(momentum_from(&Snapshot::new(model, state)?, state))
}

fn momentum_from(snap: &Snapshot, state: &HybridState) -> Vector6<f64> {
    let mut out = Vector6::zeros();
    for mf in &snap.masses {
        let h = mf.inertia * mf.frame.velocity;
        let world = state.base * mf.frame.pose;
        let f = world.rotation * h.fixed_rows::<3>(3);
        let m = world.rotation * h.fixed_rows::<3>(0) + world.position.cross(&f);
        out += Vector6::new(m.x, m.y, m.z, f.x, f.y, f.z);
    }
    out
}

/// World pose and world-frame Jacobian `(ω, ṗ)` of a tracked point.
pub fn point_state(
    model: &HybridModel,
    state: &HybridState,
    host: &PointHost,
) -> Result<(Vector3<f64>, DMatrix<f64>)> {
    let snap = Snapshot::new(model, state)?;
    let (frame, point) = snap.host_frame(model, state, host)?;
    let world = state.base * frame.pose;
    let jac = crate::skeleton::world_point_jacobian(&world, &frame.jac, &point);
    Ok((world.transform_point(&point), jac))
}

/// World positions of all end effectors, in model order.
pub fn end_effector_positions(model: &HybridModel, state: &HybridState) -> Result<Vec<Vector3<f64>>> {
    let snap = Snapshot::new(model, state)?;
    model
        .skeleton
        .end_effectors
        .iter()
        .map(|e| {
            let (frame, point) = snap.host_frame(model, state, &e.host)?;
            Ok((state.base * frame.pose).transform_point(&point))
        })
        .collect()
}

/// World centre of mass of the whole model.
pub fn center_of_mass(model: &HybridModel, state: &HybridState) -> Result<Vector3<f64>> {
    let snap = Snapshot::new(model, state)?;
    let mut sum = Vector3::zeros();
    let mut mass = 0.0;
    for mf in &snap.masses {
        sum += (state.base * mf.frame.pose).transform_point(&mf.com) * mf.mass;
        mass += mf.mass;
    }
    Ok(sum / mass)
}
