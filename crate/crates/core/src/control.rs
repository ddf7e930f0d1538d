//! Joint-level PD control, joint-limit penalties and the virtual pelvis
//! stabilizer that keeps the base in the sagittal (x-y) plane.

use nalgebra::{DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::log_se3;
use crate::liegroup::Pose;
use crate::model::{BaseMode, HybridModel, HybridState};

/// Policy actions are applied at this rate.
pub const CONTROL_HZ: f64 = 30.0;

/// Physics steps per control tick at the default 1200 Hz.
pub const SUBSTEPS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
}

impl PdGains {
    pub fn new(kp: DVector<f64>, kd: DVector<f64>) -> Result<Self> {
        if kp.len() != kd.len() {
            return Err(Error::InvalidArgument(format!(
                "kp has {} entries, kd has {}",
                kp.len(),
                kd.len()
            )));
        }
        if kp.iter().chain(kd.iter()).any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidArgument("PD gains must be finite and non-negative".into()));
        }
        Ok(Self { kp, kd })
    }

    pub fn from_model(model: &HybridModel) -> Self {
        Self {
            kp: DVector::from_column_slice(&model.control.kp),
            kd: DVector::from_column_slice(&model.control.kd),
        }
    }

    pub fn len(&self) -> usize {
        self.kp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kp.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdOutput {
    pub torque: DVector<f64>,
    /// Per joint: the raw command exceeded its torque limit.
    pub saturated: Vec<bool>,
}

impl PdOutput {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// `τ = K_P (q_cmd − q) − K_D q̇`, clamped to `±limits`.
pub fn pd_torque(
    gains: &PdGains,
    limits: &[f64],
    q_cmd: &[f64],
    q: &[f64],
    qd: &[f64],
) -> Result<PdOutput> {
    let n = gains.len();
    if [limits.len(), q_cmd.len(), q.len(), qd.len()].iter().any(|&l| l != n) {
        return Err(Error::InvalidArgument(format!("pd_torque expects {n} joints")));
    }
    let mut torque = DVector::zeros(n);
    let mut saturated = vec![false; n];
    for i in 0..n {
        let raw = gains.kp[i] * (q_cmd[i] - q[i]) - gains.kd[i] * qd[i];
        let lim = limits[i].abs();
        torque[i] = raw.clamp(-lim, lim);
        saturated[i] = raw.abs() > lim;
    }
    Ok(PdOutput { torque, saturated })
}

/// Torque limits of the actuated joints, model order.
pub fn torque_limits(model: &HybridModel) -> Vec<f64> {
    model.skeleton.actuated_joints().map(|j| j.torque_limit).collect()
}

/// Passive spring-damper that pushes joints back inside their range.
/// Zero for joints within limits.
pub fn joint_limit_torque(model: &HybridModel, q: &[f64], qd: &[f64]) -> DVector<f64> {
    let k = model.control.limit_stiffness;
    let d = model.control.limit_damping;
    DVector::from_iterator(
        q.len(),
        model.skeleton.actuated_joints().enumerate().map(|(i, j)| {
            if q[i] > j.upper {
                -k * (q[i] - j.upper) - d * qd[i].max(0.0)
            } else if q[i] < j.lower {
                k * (j.lower - q[i]) - d * qd[i].min(0.0)
            } else {
                0.0
            }
        }),
    )
}

/// Base-frame wrench `(torque, force)` of a PD law on lateral position
/// (world z), roll and yaw. Forward, vertical and pitch motion are left
/// free. The orientation error is the rotation vector of the base with its
/// z component dropped, so any pure pitch gives exactly zero.
pub fn pelvis_stabilizer(model: &HybridModel, state: &HybridState) -> Vector6<f64> {
    if model.base_mode == BaseMode::Fixed {
        return Vector6::zeros();
    }
    stabilizer_wrench(
        &state.base,
        &state.base_velocity.angular(),
        &state.base_velocity.linear(),
        model.control.stabilizer_kp,
        model.control.stabilizer_kd,
    )
}

fn stabilizer_wrench(
    base: &Pose,
    omega_body: &Vector3<f64>,
    v_body: &Vector3<f64>,
    kp: f64,
    kd: f64,
) -> Vector6<f64> {
    let r = base.rotation;
    let phi = log_se3(&Pose::from_rotation(r))
        .map(|t| t.angular())
        .unwrap_or_else(|_| Vector3::zeros());
    let omega = r * omega_body;
    let v = r * v_body;
    let torque_w = Vector3::new(
        -kp * phi.x - kd * omega.x,
        -kp * phi.y - kd * omega.y,
        0.0,
    );
    let force_w = Vector3::new(0.0, 0.0, -kp * base.position.z - kd * v.z);
    let t = r.transpose() * torque_w;
    let f = r.transpose() * force_w;
    Vector6::new(t.x, t.y, t.z, f.x, f.y, f.z)
}
