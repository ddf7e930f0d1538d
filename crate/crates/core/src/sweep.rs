//! Stiffness conditions and scripted loading experiments for comparing
//! rod stiffness scales under identical loads.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{joint_limit_torque, pd_torque, pelvis_stabilizer, torque_limits, PdGains};
use crate::dynamics::{point_state, step, GeneralizedForce, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::model::{BaseMode, HybridModel};
use crate::rod::static_deflection;
use crate::skeleton::{skeleton_fk, PointHost};
use crate::table::Table;
use crate::trajectory::{new_trajectory, record};

/// Compliant, nominal and stiff stiffness scales.
pub const DEFAULT_SCALES: [f64; 3] = [0.9, 1.0, 1.1];

/// Name of a stiffness scale in reports.
pub fn condition_name(scale: f64) -> String {
    if (scale - 1.0).abs() < 1e-12 {
        "nominal".into()
    } else if scale < 1.0 {
        format!("compliant_{scale}")
    } else {
        format!("stiff_{scale}")
    }
}

/// Largest curvature deviation from rest, over segments and bending
/// components, of a rod state.
pub fn max_bending_deviation(model: &HybridModel, state: &crate::rod::RodState) -> f64 {
    let Some(rod) = &model.rod else { return 0.0 };
    rod.segments
        .iter()
        .zip(&state.strains)
        .flat_map(|(seg, xi)| (0..3).map(move |c| (xi.0[c] - seg.rest_strain.0[c]).abs()))
        .fold(0.0, f64::max)
}

/// Equilibrium bending of the rod clamped at its standing-pose root under
/// a world tip force, for the rod's stiffness scaled by `scale`.
pub fn quasi_static_bending(model: &HybridModel, scale: f64, tip_force: &Vector3<f64>) -> Result<f64> {
    let scaled = model.scale_rod(scale, 1.0)?;
    let rod = scaled
        .rod
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no rod".into()))?;
    let fk = skeleton_fk(&scaled.skeleton, &scaled.initial_base, &scaled.initial_q)?;
    let socket = fk
        .socket
        .ok_or_else(|| Error::InvalidArgument("model has no socket".into()))?;
    let root = socket * rod.attachment;
    let state = static_deflection(rod, &(root.rotation.transpose() * tip_force))?;
    Ok(max_bending_deviation(&scaled, &state))
}

/// A fixed-base run in which PD control holds the standing joint angles
/// while a world force at the rod tip ramps linearly to `force` and then
/// stays constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptedLoad {
    /// World force at the rod tip, N. Defaults to the body weight acting
    /// against gravity.
    pub force: Option<[f64; 3]>,
    /// s
    pub ramp: f64,
    /// s
    pub duration: f64,
    pub dt: f64,
}

impl Default for ScriptedLoad {
    fn default() -> Self {
        Self {
            force: None,
            ramp: 0.5,
            duration: 1.5,
            dt: DEFAULT_DT,
        }
    }
}

/// World tip force of `load` on `model`.
pub fn load_force(model: &HybridModel, load: &ScriptedLoad) -> Vector3<f64> {
    match load.force {
        Some(f) => Vector3::from(f),
        None => -model.gravity * model.total_mass(),
    }
}

/// Runs the scripted load on `model` with rod stiffness scaled by
/// `scale` (damping unchanged) and returns the recorded trajectory.
pub fn scripted_load_run(model: &HybridModel, scale: f64, load: &ScriptedLoad) -> Result<Table> {
    let mut m = model.scale_rod(scale, 1.0)?;
    m.base_mode = BaseMode::Fixed;
    let rod_len = m
        .rod
        .as_ref()
        .map(|r| r.total_length())
        .ok_or_else(|| Error::InvalidArgument("model has no rod".into()))?;
    if !(load.dt > 0.0 && load.duration >= 0.0 && load.ramp >= 0.0) {
        return Err(Error::InvalidArgument("bad scripted load timing".into()));
    }
    let tip = PointHost::Rod { s: rod_len };
    let gains = PdGains::from_model(&m);
    let limits = torque_limits(&m);
    let target = m.initial_q.clone();
    let force = load_force(&m, load);
    let mut state = m.rest_state();
    let mut table = new_trajectory(&m, load.dt);
    let steps = (load.duration / load.dt).round() as usize;
    for k in 0..steps {
        let t = k as f64 * load.dt;
        let ramp = if load.ramp > 0.0 { (t / load.ramp).min(1.0) } else { 1.0 };
        let pd = pd_torque(&gains, &limits, &target, &state.q, &state.qd)?;
        let (_, jac) = point_state(&m, &state, &tip)?;
        let external = jac.rows(3, 3).transpose() * (force * ramp);
        let mut act = GeneralizedForce::from_vector(&m, &DVector::from_column_slice(external.as_slice()));
        act.base += pelvis_stabilizer(&m, &state);
        act.rigid += &pd.torque + joint_limit_torque(&m, &state.q, &state.qd);
        let (next, info) = step(&m, &state, &act, load.dt)?;
        if !next.is_finite() {
            return Err(Error::Diverged { time: t + load.dt });
        }
        state = next;
        record(&mut table, &m, (k + 1) as f64 * load.dt, &state, pd.torque.as_slice(), &info.contacts)?;
    }
    Ok(table)
}
