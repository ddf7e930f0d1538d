#![allow(dead_code)]

use flexrun_core::liegroup::{Pose, Twist};
use flexrun_core::model::{HybridModel, HybridState};
use nalgebra::{Vector3, Vector6};

/// Small deterministic generator so tests do not depend on an RNG crate.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn vec3(&mut self, scale: f64) -> Vector3<f64> {
        Vector3::new(self.range(-scale, scale), self.range(-scale, scale), self.range(-scale, scale))
    }
}

/// Random but physically sensible state: joints inside limits, active
/// strains near rest.
pub fn random_state(model: &HybridModel, rng: &mut Lcg, speed: f64) -> HybridState {
    let mut s = model.rest_state();
    let axis = rng.vec3(1.0).normalize();
    s.base = Pose::from_translation(Vector3::new(0.0, 1.5, 0.0) + rng.vec3(0.5))
        * Pose::from_axis_angle(&axis, rng.range(0.0, 1.0));
    s.base_velocity = Twist::new(rng.vec3(speed), rng.vec3(speed));
    for (i, j) in model.skeleton.actuated_joints().enumerate() {
        s.q[i] = rng.range(j.lower.max(-2.0), j.upper.min(2.0));
        s.qd[i] = rng.range(-speed, speed);
    }
    if let Some(rod) = &model.rod {
        let active = rod.active.active_indices();
        for seg in 0..rod.num_segments() {
            for &c in &active {
                let mag = if c < 3 { 1.0 } else { 0.05 };
                s.rod.strains[seg].0[c] += rng.range(-mag, mag);
                s.rod.strain_rates[seg].0[c] = rng.range(-speed, speed) * mag;
            }
        }
    }
    if model.base_mode == flexrun_core::model::BaseMode::Fixed {
        s.base = model.initial_base;
        s.base_velocity = Twist(Vector6::zeros());
    }
    s
}

pub fn zero_gravity(model: &HybridModel) -> HybridModel {
    let mut m = model.clone();
    m.gravity = Vector3::zeros();
    m
}

/// Rod with all damping removed.
pub fn undamped(model: &HybridModel) -> HybridModel {
    model.scale_rod(1.0, 0.0).expect("valid scale")
}

pub const SINGLE_BODY: &str = r#"
name = "single"
gravity = [0.0, -9.81, 0.0]
[initial]
base_position = [0.0, 2.0, 0.0]
[[bodies]]
name = "block"
mass = 2.5
com = [0.1, -0.05, 0.02]
inertia = [0.3, 0.2, 0.1]
"#;

/// One link of length 0.5 with (almost) all mass at the end.
pub const PENDULUM: &str = r#"
name = "pendulum"
base = "fixed"
[initial]
base_position = [0.0, 2.0, 0.0]
[[bodies]]
name = "base"
mass = 1.0
inertia = [1.0, 1.0, 1.0]
[[bodies]]
name = "bob"
mass = 1.0
com = [0.0, -0.5, 0.0]
inertia = [1e-9, 1e-9, 1e-9]
[[joints]]
name = "pivot"
parent = "base"
child = "bob"
"#;
