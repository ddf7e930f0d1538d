//! Simulation trajectories as versioned CSV tables.
//!
//! Columns: `t`; base position and rotation vector (`base_x … base_rz`);
//! base twist in the base frame (`base_wx … base_vz`); `q_<joint>`,
//! `qd_<joint>`; active strain deviations from rest `e<seg>_<comp>` and
//! their rates `ed<seg>_<comp>`; actuator torques `tau_<joint>`; per
//! contact the world force `c_<name>_fx|fy|fz`; and `elastic_energy`.
//! Metadata records the model name, total mass, step and contact sides.

use nalgebra::Vector3;

use crate::dynamics::ContactForce;
use crate::error::Result;
use crate::liegroup::{log_se3, Pose};
use crate::model::{HybridModel, HybridState, Side};
use crate::rod::elastic_energy;
use crate::table::Table;

pub const TRAJECTORY_SCHEMA: &str = "flexrun-trajectory";
pub const TRAJECTORY_MAJOR: u32 = 1;

const STRAIN_NAMES: [&str; 6] = ["kx", "ky", "kz", "ux", "uy", "uz"];

/// Empty trajectory table with the column layout of `model`.
pub fn new_trajectory(model: &HybridModel, dt: f64) -> Table {
    let mut cols = vec!["t".to_string()];
    for a in ["x", "y", "z", "rx", "ry", "rz", "wx", "wy", "wz", "vx", "vy", "vz"] {
        cols.push(format!("base_{a}"));
    }
    let joints: Vec<&str> = model.skeleton.actuated_joints().map(|j| j.name.as_str()).collect();
    cols.extend(joints.iter().map(|n| format!("q_{n}")));
    cols.extend(joints.iter().map(|n| format!("qd_{n}")));
    for prefix in ["e", "ed"] {
        cols.extend(strain_columns(model, prefix));
    }
    cols.extend(joints.iter().map(|n| format!("tau_{n}")));
    for c in &model.contacts {
        cols.extend(["fx", "fy", "fz"].iter().map(|a| format!("c_{}_{a}", c.name)));
    }
    cols.push("elastic_energy".into());
    let mut table = Table::new(TRAJECTORY_SCHEMA, TRAJECTORY_MAJOR, 0, cols);
    table.set_meta("model", &model.name);
    table.set_meta("mass", model.total_mass());
    table.set_meta("dt", dt);
    for side in [Side::Left, Side::Right] {
        let names: Vec<&str> = model
            .contacts
            .iter()
            .filter(|c| c.side == side)
            .map(|c| c.name.as_str())
            .collect();
        table.set_meta(side_key(side), names.join(" "));
    }
    table
}

pub fn side_key(side: Side) -> &'static str {
    match side {
        Side::Left => "contacts_left",
        Side::Right => "contacts_right",
    }
}

fn strain_columns(model: &HybridModel, prefix: &str) -> Vec<String> {
    let Some(rod) = &model.rod else { return Vec::new() };
    let active = rod.active.active_indices();
    (0..rod.num_segments())
        .flat_map(|s| active.iter().map(move |&c| format!("{prefix}{s}_{}", STRAIN_NAMES[c])))
        .collect()
}

/// Appends one row. `tau` are the actuator torques applied over the step
/// that produced `state`; `contacts` the contact forces of that step.
pub fn record(
    table: &mut Table,
    model: &HybridModel,
    t: f64,
    state: &HybridState,
    tau: &[f64],
    contacts: &[ContactForce],
) -> Result<()> {
    let mut row = Vec::with_capacity(table.columns.len());
    row.push(t);
    row.extend(state.base.position.iter());
    let rv = log_se3(&Pose::from_rotation(state.base.rotation))
        .map(|x| x.angular())
        .unwrap_or_else(|_| Vector3::from_element(f64::NAN));
    row.extend(rv.iter());
    row.extend(state.base_velocity.0.iter());
    row.extend(&state.q);
    row.extend(&state.qd);
    if let Some(rod) = &model.rod {
        let active = rod.active.active_indices();
        for (seg, xi) in rod.segments.iter().zip(&state.rod.strains) {
            row.extend(active.iter().map(|&c| xi.0[c] - seg.rest_strain.0[c]));
        }
        for rate in &state.rod.strain_rates {
            row.extend(active.iter().map(|&c| rate.0[c]));
        }
    }
    row.extend(tau);
    for spec in &model.contacts {
        let f = contacts
            .iter()
            .find(|c| c.name == spec.name)
            .map_or_else(Vector3::zeros, ContactForce::world_force);
        row.extend(f.iter());
    }
    row.push(model.rod.as_ref().map_or(0.0, |r| elastic_energy(r, &state.rod)));
    table.push(row)
}
