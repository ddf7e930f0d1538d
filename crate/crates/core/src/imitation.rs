//! Imitation task: synthetic reference gaits, the exponential tracking
//! reward, the policy-facing state vector and episode termination.
//!
//! The reference waveforms are parametric (mean plus cosine harmonics per
//! joint, half-period offset between legs) and are not derived from motion
//! capture. They can be replaced by any trajectory loaded from CSV.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::end_effector_positions;
use crate::error::{Error, Result};
use crate::liegroup::{exp_se3, log_se3, rotation_about, Pose, Twist};
use crate::model::{BaseMode, HybridModel, HybridState, Profile};
use crate::table::Table;

pub const REFERENCE_SCHEMA: &str = "flexrun-reference";
pub const REFERENCE_MAJOR: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitKind {
    Walk,
    Run,
    Sprint,
    /// Pendulum-style swing of every joint with a fixed base; for small
    /// test models.
    Swing,
}

impl GaitKind {
    /// m/s
    pub fn default_speed(self) -> f64 {
        match self {
            GaitKind::Walk => 1.2,
            GaitKind::Run => 3.0,
            GaitKind::Sprint => 5.0,
            GaitKind::Swing => 0.0,
        }
    }
}

impl FromStr for GaitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "walk" => Ok(GaitKind::Walk),
            "run" => Ok(GaitKind::Run),
            "sprint" => Ok(GaitKind::Sprint),
            "swing" => Ok(GaitKind::Swing),
            other => Err(Error::InvalidArgument(format!(
                "unknown gait '{other}' (expected walk, run, sprint or swing)"
            ))),
        }
    }
}

/// `q(θ) = mean + Σ_k a_k cos(k θ + φ_k)` with `θ = 2π t / period`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointWave {
    pub mean: f64,
    /// `[amplitude, phase]` for harmonics 1, 2, …
    #[serde(default)]
    pub harmonics: Vec<[f64; 2]>,
}

impl JointWave {
    fn eval(&self, theta: f64) -> (f64, f64) {
        let mut q = self.mean;
        let mut dq = 0.0;
        for (k, [a, phi]) in self.harmonics.iter().enumerate() {
            let k = (k + 1) as f64;
            q += a * (k * theta + phi).cos();
            dq -= a * k * (k * theta + phi).sin();
        }
        (q, dq)
    }
}

/// Waveform coefficients of a reference gait.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// s
    pub period: f64,
    /// Mean base height relative to the model's standing pose, m.
    pub height_offset: f64,
    /// Vertical base oscillation, two cycles per period, m.
    pub bob: f64,
    /// Constant base rotation about z, rad (negative leans forward).
    pub pitch: f64,
    /// One wave per actuated joint, model order.
    pub joints: Vec<JointWave>,
}

fn wave(mean: f64, harmonics: &[[f64; 2]]) -> JointWave {
    JointWave {
        mean,
        harmonics: harmonics.to_vec(),
    }
}

impl GaitParams {
    /// Built-in coefficients. Walk, run and sprint need the humanoid joint
    /// layout `[hip_r, knee_r, hip_l, knee_l, ankle_l, shoulder_r, elbow_r,
    /// shoulder_l, elbow_l]`; swing works for any joint count.
    pub fn builtin(model: &HybridModel, kind: GaitKind) -> Result<Self> {
        let n = model.num_joints();
        if kind == GaitKind::Swing {
            let joints = (0..n)
                .map(|i| wave(0.2 * i as f64, &[[0.9 * 0.6f64.powi(i as i32), -0.6 * i as f64]]))
                .collect();
            return Ok(Self {
                period: 1.5,
                height_offset: 0.0,
                bob: 0.0,
                pitch: 0.0,
                joints,
            });
        }
        if model.profile != Profile::Humanoid {
            return Err(Error::InvalidArgument(format!(
                "gait '{kind:?}' needs a humanoid model"
            )));
        }
        // (period, height, bob, pitch, hip mean/amp, knee mean/a1/a2,
        //  ankle amp, shoulder amp, elbow mean)
        let (period, height, bob, pitch, hm, ha, km, k1, k2, aa, sa, em) = match kind {
            GaitKind::Walk => (1.1, -0.01, 0.015, -0.03, 0.15, 0.40, -0.50, 0.30, 0.12, 0.20, 0.30, 0.30),
            GaitKind::Run => (0.72, -0.03, 0.03, -0.10, 0.35, 0.60, -0.90, 0.50, 0.25, 0.30, 0.60, 1.20),
            _ => (0.60, -0.04, 0.035, -0.15, 0.45, 0.75, -1.10, 0.60, 0.30, 0.35, 0.80, 1.40),
        };
        // Knee flexes most shortly after toe-off, a quarter period after
        // peak hip extension.
        let leg = |offset: f64| {
            [
                wave(hm, &[[ha, offset]]),
                wave(km, &[[k1, offset - 0.5 * PI], [k2, 2.0 * offset + 0.3]]),
            ]
        };
        let [hip_r, knee_r] = leg(0.0);
        let [hip_l, knee_l] = leg(PI);
        Ok(Self {
            period,
            height_offset: height,
            bob,
            pitch,
            joints: vec![
                hip_r,
                knee_r,
                hip_l,
                knee_l,
                wave(0.0, &[[aa, PI + 0.5 * PI]]),
                wave(0.0, &[[sa, PI]]),
                wave(em, &[[0.1, PI]]),
                wave(0.0, &[[sa, 0.0]]),
                wave(em, &[[0.1, 0.0]]),
            ],
        })
    }

    fn validate(&self, model: &HybridModel) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::InvalidArgument("gait period must be positive".into()));
        }
        if self.joints.len() != model.num_joints() {
            return Err(Error::InvalidArgument(format!(
                "gait has {} joint waves, model has {} joints",
                self.joints.len(),
                model.num_joints()
            )));
        }
        Ok(())
    }
}

/// One reference sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub base: Pose,
    /// Base twist in the base frame, like `HybridState::base_velocity`.
    pub base_velocity: Twist,
    /// World positions, model end-effector order.
    pub end_effectors: Vec<Vector3<f64>>,
}

impl ReferenceSample {
    /// Model state matching the sample, rod at rest.
    pub fn to_state(&self, model: &HybridModel) -> HybridState {
        let mut s = model.rest_state();
        s.base = self.base;
        s.base_velocity = self.base_velocity;
        s.q = self.q.iter().copied().collect();
        s.qd = self.qd.iter().copied().collect();
        s
    }
}

/// Evaluates the parametric gait at time `t`. The base advances exactly
/// `speed · t` along x; fixed-base models keep their base.
pub fn reference_gait(
    model: &HybridModel,
    params: &GaitParams,
    speed: f64,
    t: f64,
) -> Result<ReferenceSample> {
    params.validate(model)?;
    if !(speed >= 0.0) || !speed.is_finite() || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("bad speed {speed} or time {t}")));
    }
    let omega = TAU / params.period;
    let theta = omega * t.rem_euclid(params.period);
    let mut q = DVector::zeros(params.joints.len());
    let mut qd = DVector::zeros(params.joints.len());
    for (i, w) in params.joints.iter().enumerate() {
        let (v, dv) = w.eval(theta);
        q[i] = v;
        qd[i] = dv * omega;
    }
    let (base, base_velocity) = if model.base_mode == BaseMode::Fixed {
        (model.initial_base, Twist::zero())
    } else {
        let rot = model.initial_base.rotation * rotation_about(&Vector3::z(), params.pitch);
        let pos = model.initial_base.position
            + Vector3::new(
                speed * t,
                params.height_offset + params.bob * (2.0 * theta).cos(),
                0.0,
            );
        let v_world = Vector3::new(speed, -2.0 * omega * params.bob * (2.0 * theta).sin(), 0.0);
        (
            Pose::new(rot, pos),
            Twist::new(Vector3::zeros(), rot.transpose() * v_world),
        )
    };
    let mut sample = ReferenceSample {
        t,
        q,
        qd,
        base,
        base_velocity,
        end_effectors: Vec::new(),
    };
    sample.end_effectors = end_effector_positions(model, &sample.to_state(model))?;
    Ok(sample)
}

/// Tabulated reference over one period, extended periodically. Each
/// further period repeats the joint motion and shifts the base by the
/// per-period displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub period: f64,
    /// Hz
    pub rate: f64,
    pub joint_names: Vec<String>,
    pub end_effector_names: Vec<String>,
    /// Samples at `k / rate` for `k = 0 ..= period · rate`.
    pub samples: Vec<ReferenceSample>,
}

impl ReferenceTrajectory {
    /// Tabulates the parametric gait; `rate` is rounded so an integer
    /// number of intervals spans one period.
    pub fn from_gait(model: &HybridModel, params: &GaitParams, speed: f64, rate: f64) -> Result<Self> {
        params.validate(model)?;
        if !(rate > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let intervals = (params.period * rate).round().max(1.0) as usize;
        let h = params.period / intervals as f64;
        let samples = (0..=intervals)
            .map(|k| {
                let t = if k == intervals { params.period } else { k as f64 * h };
                let mut s = reference_gait(model, params, speed, t)?;
                if k == intervals {
                    // θ wraps to exactly zero so the last sample repeats the
                    // first up to the forward shift.
                    s.t = params.period;
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            period: params.period,
            rate: 1.0 / h,
            joint_names: joint_names(model),
            end_effector_names: model.skeleton.end_effectors.iter().map(|e| e.name.clone()).collect(),
            samples,
        })
    }

    /// Base displacement over one period (world frame).
    pub fn period_shift(&self) -> Vector3<f64> {
        self.samples.last().unwrap().base.position - self.samples[0].base.position
    }

    /// Linear interpolation between tabulated samples; orientation moves
    /// along the geodesic.
    pub fn sample(&self, t: f64) -> ReferenceSample {
        let cycles = (t / self.period).floor();
        let local = t - cycles * self.period;
        let shift = self.period_shift() * cycles;
        let last = self.samples.len() - 1;
        let x = (local / self.period * last as f64).clamp(0.0, last as f64);
        let i = (x.floor() as usize).min(last.saturating_sub(1));
        let a = &self.samples[i];
        let b = &self.samples[(i + 1).min(last)];
        let w = x - i as f64;
        let lerp = |p: &DVector<f64>, q: &DVector<f64>| p + (q - p) * w;
        let rel = Pose::from_rotation(a.base.rotation.transpose() * b.base.rotation);
        let rot = match log_se3(&rel) {
            Ok(xi) => {
                let r = exp_se3(&Twist::new(xi.angular() * w, Vector3::zeros()), 1.0)
                    .map_or(rel.rotation, |p| p.rotation);
                a.base.rotation * r
            }
            Err(_) => a.base.rotation,
        };
        let pos = a.base.position + (b.base.position - a.base.position) * w + shift;
        let ee = a
            .end_effectors
            .iter()
            .zip(&b.end_effectors)
            .map(|(p, q)| p + (q - p) * w + shift)
            .collect();
        ReferenceSample {
            t,
            q: lerp(&a.q, &b.q),
            qd: lerp(&a.qd, &b.qd),
            base: Pose::new(rot, pos),
            base_velocity: Twist(a.base_velocity.0 + (b.base_velocity.0 - a.base_velocity.0) * w),
            end_effectors: ee,
        }
    }

    pub fn to_table(&self) -> Table {
        let mut cols = vec!["t".to_string()];
        for a in ["x", "y", "z", "rx", "ry", "rz", "wx", "wy", "wz", "vx", "vy", "vz"] {
            cols.push(format!("base_{a}"));
        }
        cols.extend(self.joint_names.iter().map(|n| format!("q_{n}")));
        cols.extend(self.joint_names.iter().map(|n| format!("qd_{n}")));
        for n in &self.end_effector_names {
            cols.extend(["x", "y", "z"].iter().map(|a| format!("ee_{n}_{a}")));
        }
        let mut table = Table::new(REFERENCE_SCHEMA, REFERENCE_MAJOR, 0, cols);
        table.set_meta("period", self.period);
        table.set_meta("rate", self.rate);
        for s in &self.samples {
            let rv = log_se3(&Pose::from_rotation(s.base.rotation))
                .map(|x| x.angular())
                .unwrap_or_else(|_| Vector3::zeros());
            let mut row = vec![s.t];
            row.extend(s.base.position.iter());
            row.extend(rv.iter());
            row.extend(s.base_velocity.0.iter());
            row.extend(s.q.iter());
            row.extend(s.qd.iter());
            for p in &s.end_effectors {
                row.extend(p.iter());
            }
            table.rows.push(row);
        }
        table
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let period = table
            .meta_f64("period")
            .ok_or_else(|| Error::Format("reference needs '# period = <s>'".into()))?;
        let joint_names: Vec<String> = table
            .columns_with_prefix("q_")
            .iter()
            .map(|c| c["q_".len()..].to_string())
            .collect();
        let mut end_effector_names: Vec<String> = Vec::new();
        for c in table.columns_with_prefix("ee_") {
            if let Some(name) = c.strip_suffix("_x") {
                end_effector_names.push(name["ee_".len()..].to_string());
            }
        }
        let col = |name: &str| -> Result<usize> {
            table
                .column_index(name)
                .ok_or_else(|| Error::Format(format!("missing column '{name}'")))
        };
        let base_cols = ["x", "y", "z", "rx", "ry", "rz", "wx", "wy", "wz", "vx", "vy", "vz"]
            .iter()
            .map(|a| col(&format!("base_{a}")))
            .collect::<Result<Vec<_>>>()?;
        let q_cols = joint_names.iter().map(|n| col(&format!("q_{n}"))).collect::<Result<Vec<_>>>()?;
        let qd_cols = joint_names.iter().map(|n| col(&format!("qd_{n}"))).collect::<Result<Vec<_>>>()?;
        let ee_cols = end_effector_names
            .iter()
            .map(|n| Ok([col(&format!("ee_{n}_x"))?, col(&format!("ee_{n}_y"))?, col(&format!("ee_{n}_z"))?]))
            .collect::<Result<Vec<_>>>()?;
        let t_col = col("t")?;
        if table.rows.len() < 2 {
            return Err(Error::Format("reference needs at least two samples".into()));
        }
        let mut samples = Vec::with_capacity(table.rows.len());
        for r in &table.rows {
            let g = |k: usize| r[base_cols[k]];
            let rot = exp_se3(&Twist::new(Vector3::new(g(3), g(4), g(5)), Vector3::zeros()), 1.0)?.rotation;
            samples.push(ReferenceSample {
                t: r[t_col],
                q: DVector::from_iterator(q_cols.len(), q_cols.iter().map(|&c| r[c])),
                qd: DVector::from_iterator(qd_cols.len(), qd_cols.iter().map(|&c| r[c])),
                base: Pose::new(rot, Vector3::new(g(0), g(1), g(2))),
                base_velocity: Twist(Vector6::new(g(6), g(7), g(8), g(9), g(10), g(11))),
                end_effectors: ee_cols.iter().map(|c| Vector3::new(r[c[0]], r[c[1]], r[c[2]])).collect(),
            });
        }
        let span = samples.last().unwrap().t - samples[0].t;
        if (span - period).abs() > 1e-9 * period.max(1.0) {
            return Err(Error::Format(format!(
                "samples span {span} s but the period is {period} s"
            )));
        }
        let rate = (samples.len() - 1) as f64 / period;
        Ok(Self {
            period,
            rate,
            joint_names,
            end_effector_names,
            samples,
        })
    }

    /// Checks that joint and end-effector layout match the model.
    pub fn check_model(&self, model: &HybridModel) -> Result<()> {
        if self.joint_names != joint_names(model) {
            return Err(Error::InvalidArgument(format!(
                "reference joints {:?} do not match the model",
                self.joint_names
            )));
        }
        if self.end_effector_names.len() != model.skeleton.end_effectors.len() {
            return Err(Error::InvalidArgument("reference end effectors do not match the model".into()));
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.to_table().save(path)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_table(&Table::load(path, REFERENCE_SCHEMA, REFERENCE_MAJOR)?)
    }
}

pub fn joint_names(model: &HybridModel) -> Vec<String> {
    model.skeleton.actuated_joints().map(|j| j.name.clone()).collect()
}

/// Weights and kernel coefficients of the tracking reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w_q: f64,
    pub w_v: f64,
    pub w_e: f64,
    pub w_0: f64,
    pub beta_q: f64,
    pub beta_v: f64,
    pub beta_e: f64,
    pub beta_01: f64,
    pub beta_02: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_q: 1.0,
            w_v: 1.0,
            w_e: 1.0,
            w_0: 0.1,
            beta_q: 2.0,
            beta_v: 0.03,
            beta_e: 40.0,
            beta_01: 10.0,
            beta_02: 0.1,
        }
    }
}

impl RewardWeights {
    /// Reward of perfect tracking; `r_0` counts two kernels.
    pub fn max_reward(&self) -> f64 {
        self.w_q + self.w_v + self.w_e + 2.0 * self.w_0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_q, self.w_v, self.w_e, self.w_0, self.beta_q, self.beta_v, self.beta_e,
            self.beta_01, self.beta_02,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("reward weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `exp(−β ‖x_ref − x‖²)`.
pub fn kernel(beta: f64, x_ref: &[f64], x: &[f64]) -> Result<f64> {
    if x_ref.len() != x.len() {
        return Err(Error::InvalidArgument(format!(
            "kernel inputs have lengths {} and {}",
            x_ref.len(),
            x.len()
        )));
    }
    let sq: f64 = x_ref.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-beta * sq).exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_q: f64,
    pub r_v: f64,
    pub r_e: f64,
    /// Sum of the base pose and base velocity kernels, in (0, 2].
    pub r_0: f64,
    pub total: f64,
}

/// Tracking reward. `end_effectors` are the current world positions
/// (see [`end_effector_positions`]).
pub fn reward(
    weights: &RewardWeights,
    state: &HybridState,
    end_effectors: &[Vector3<f64>],
    reference: &ReferenceSample,
) -> Result<RewardTerms> {
    let r_q = kernel(weights.beta_q, reference.q.as_slice(), &state.q)?;
    let r_v = kernel(weights.beta_v, reference.qd.as_slice(), &state.qd)?;
    if end_effectors.len() != reference.end_effectors.len() {
        return Err(Error::InvalidArgument("end-effector count mismatch".into()));
    }
    let flat = |ps: &[Vector3<f64>]| ps.iter().flat_map(|p| p.iter().copied()).collect::<Vec<f64>>();
    let r_e = kernel(weights.beta_e, &flat(&reference.end_effectors), &flat(end_effectors))?;
    let pose_err = base_pose_error(&reference.base, &state.base);
    let r_pose = kernel(weights.beta_01, &[0.0; 6], pose_err.as_slice())?;
    let r_vel = kernel(
        weights.beta_02,
        reference.base_velocity.0.as_slice(),
        state.base_velocity.0.as_slice(),
    )?;
    let r_0 = r_pose + r_vel;
    let total = weights.w_q * r_q + weights.w_v * r_v + weights.w_e * r_e + weights.w_0 * r_0;
    Ok(RewardTerms {
        r_q,
        r_v,
        r_e,
        r_0,
        total,
    })
}

/// Position difference and rotation vector of `R_refᵀ R`.
pub fn base_pose_error(reference: &Pose, actual: &Pose) -> Vector6<f64> {
    let dp = actual.position - reference.position;
    let rel = Pose::from_rotation(reference.rotation.transpose() * actual.rotation);
    let dr = log_se3(&rel).map_or_else(|_| Vector3::repeat(PI), |x| x.angular());
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Length of the policy-facing state vector for `n` joints.
pub fn rl_state_dim(num_joints: usize) -> usize {
    15 + 2 * num_joints
}

/// Base position (3), first two columns of the base rotation (6), base
/// twist (6), joint angles and rates. Rod strains are not observed.
pub fn rl_state(state: &HybridState) -> DVector<f64> {
    let n = state.q.len();
    let mut out = Vec::with_capacity(rl_state_dim(n));
    out.extend(state.base.position.iter());
    out.extend(state.base.rotation.column(0).iter());
    out.extend(state.base.rotation.column(1).iter());
    out.extend(state.base_velocity.0.iter());
    out.extend(&state.q);
    out.extend(&state.qd);
    DVector::from_vec(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationCause {
    /// Pelvis dropped below the height threshold.
    Fall,
    /// Base pitched beyond the allowed angle.
    Pitch,
    /// Non-finite or failed simulation state.
    Diverged,
    /// Episode reached its time limit.
    Horizon,
    /// End effectors strayed too far from the reference.
    Tracking,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminationConfig {
    /// s
    pub horizon: f64,
    /// Fraction of the standing pelvis height below which the episode ends.
    pub min_height_fraction: f64,
    /// rad, relative to the standing base orientation.
    pub max_pitch: f64,
    /// Mean end-effector distance from the reference, m; `None` disables.
    pub max_tracking_error: Option<f64>,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            min_height_fraction: 0.5,
            max_pitch: 1.0,
            max_tracking_error: None,
        }
    }
}

/// Base rotation about z relative to the standing pose.
pub fn base_pitch(model: &HybridModel, state: &HybridState) -> f64 {
    let rel = model.initial_base.rotation.transpose() * state.base.rotation;
    rel[(1, 0)].atan2(rel[(0, 0)])
}

/// Mean distance between current and reference end effectors.
pub fn tracking_error(end_effectors: &[Vector3<f64>], reference: &ReferenceSample) -> f64 {
    if end_effectors.is_empty() {
        return 0.0;
    }
    let sum: f64 = end_effectors
        .iter()
        .zip(&reference.end_effectors)
        .map(|(p, r)| (p - r).norm())
        .sum();
    sum / end_effectors.len() as f64
}

/// First matching cause in the order divergence, fall, pitch, tracking,
/// horizon. `tracking` is the current [`tracking_error`], if known.
pub fn should_terminate(
    model: &HybridModel,
    config: &TerminationConfig,
    state: &HybridState,
    t: f64,
    tracking: Option<f64>,
) -> Option<TerminationCause> {
    if !state.is_finite() || !t.is_finite() {
        return Some(TerminationCause::Diverged);
    }
    if model.base_mode == BaseMode::Floating {
        let rest = model.initial_base.position.y - model.ground_height;
        let height = state.base.position.y - model.ground_height;
        if height < config.min_height_fraction * rest {
            return Some(TerminationCause::Fall);
        }
        if base_pitch(model, state).abs() > config.max_pitch {
            return Some(TerminationCause::Pitch);
        }
    }
    if let (Some(limit), Some(err)) = (config.max_tracking_error, tracking) {
        if !(err <= limit) {
            return Some(TerminationCause::Tracking);
        }
    }
    if t >= config.horizon - 1e-9 {
        return Some(TerminationCause::Horizon);
    }
    None
}
