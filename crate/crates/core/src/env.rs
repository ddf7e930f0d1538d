//! Imitation environment: a policy action sets PD joint targets held for
//! one 30 Hz control tick, during which the physics runs 40 steps at
//! 1200 Hz. PD and joint-limit torques and the pelvis stabilizer are
//! re-evaluated every physics step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{joint_limit_torque, pd_torque, pelvis_stabilizer, torque_limits, PdGains, SUBSTEPS};
use crate::dynamics::{end_effector_positions, step, GeneralizedForce, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::imitation::{
    reward, rl_state, rl_state_dim, should_terminate, tracking_error, GaitKind, GaitParams,
    ReferenceTrajectory, RewardTerms, RewardWeights, TerminationCause, TerminationConfig,
};
use crate::model::{HybridModel, HybridState};
use crate::table::Table;
use crate::trajectory::{new_trajectory, record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub gait: GaitKind,
    /// m/s; the gait's nominal speed when absent.
    pub speed: Option<f64>,
    /// Overrides the built-in waveform coefficients.
    pub gait_params: Option<GaitParams>,
    /// Hz
    pub reference_rate: f64,
    pub reward: RewardWeights,
    pub termination: TerminationConfig,
    pub substeps: usize,
    /// s
    pub dt: f64,
    /// Override model PD gains (one entry per joint).
    pub kp: Option<Vec<f64>>,
    pub kd: Option<Vec<f64>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            gait: GaitKind::Run,
            speed: None,
            gait_params: None,
            reference_rate: 600.0,
            reward: RewardWeights::default(),
            termination: TerminationConfig::default(),
            substeps: SUBSTEPS,
            dt: DEFAULT_DT,
            kp: None,
            kd: None,
        }
    }
}

impl EnvConfig {
    pub fn speed(&self) -> f64 {
        self.speed.unwrap_or_else(|| self.gait.default_speed())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.substeps == 0 || !(self.reference_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "dt, substeps and reference_rate must be positive".into(),
            ));
        }
        if let Some(v) = self.speed {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("speed must be >= 0, got {v}")));
            }
        }
        self.reward.validate()
    }

    /// Reference trajectory for `model` from the gait settings.
    pub fn build_reference(&self, model: &HybridModel) -> Result<ReferenceTrajectory> {
        let params = match &self.gait_params {
            Some(p) => p.clone(),
            None => GaitParams::builtin(model, self.gait)?,
        };
        ReferenceTrajectory::from_gait(model, &params, self.speed(), self.reference_rate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub obs: DVector<f64>,
    pub reward: RewardTerms,
    pub done: Option<TerminationCause>,
}

#[derive(Clone, Debug)]
pub struct Env {
    model: HybridModel,
    reference: ReferenceTrajectory,
    config: EnvConfig,
    gains: PdGains,
    limits: Vec<f64>,
    state: HybridState,
    /// Physics steps taken this episode.
    steps: u64,
    /// Reference time at episode start.
    phase: f64,
    recording: Option<Table>,
}

impl Env {
    pub fn new(model: HybridModel, config: EnvConfig) -> Result<Self> {
        let reference = config.build_reference(&model)?;
        Self::with_reference(model, reference, config)
    }

    pub fn with_reference(model: HybridModel, reference: ReferenceTrajectory, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        reference.check_model(&model)?;
        let n = model.num_joints();
        let defaults = PdGains::from_model(&model);
        let kp = config.kp.clone().map_or(defaults.kp, DVector::from_vec);
        let kd = config.kd.clone().map_or(defaults.kd, DVector::from_vec);
        if kp.len() != n || kd.len() != n {
            return Err(Error::InvalidArgument(format!("PD gains need {n} entries")));
        }
        let gains = PdGains::new(kp, kd)?;
        let limits = torque_limits(&model);
        let state = reference.sample(0.0).to_state(&model);
        Ok(Self {
            model,
            reference,
            config,
            gains,
            limits,
            state,
            steps: 0,
            phase: 0.0,
            recording: None,
        })
    }

    pub fn model(&self) -> &HybridModel {
        &self.model
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &HybridState {
        &self.state
    }

    /// Episode time, s.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.config.dt
    }

    /// Length of a control tick, s.
    pub fn control_dt(&self) -> f64 {
        self.config.dt * self.config.substeps as f64
    }

    pub fn obs_dim(&self) -> usize {
        rl_state_dim(self.model.num_joints())
    }

    pub fn action_dim(&self) -> usize {
        self.model.num_joints()
    }

    /// Starts an episode on the reference at time `phase`.
    pub fn reset(&mut self, phase: f64) -> DVector<f64> {
        self.phase = phase;
        self.steps = 0;
        self.state = self.reference.sample(phase).to_state(&self.model);
        if let Some(table) = &mut self.recording {
            table.rows.clear();
        }
        self.observation()
    }

    /// Starts an episode from an arbitrary state, reference aligned at `phase`.
    pub fn reset_to(&mut self, state: HybridState, phase: f64) -> Result<DVector<f64>> {
        self.model.check_state(&state)?;
        self.phase = phase;
        self.steps = 0;
        self.state = state;
        Ok(self.observation())
    }

    pub fn observation(&self) -> DVector<f64> {
        rl_state(&self.state)
    }

    /// Records every physics step into a trajectory table from now on.
    pub fn start_recording(&mut self) {
        self.recording = Some(new_trajectory(&self.model, self.config.dt));
    }

    pub fn take_recording(&mut self) -> Option<Table> {
        self.recording.take()
    }

    /// Applies joint targets `action` (clamped to the joint ranges) for one
    /// control tick.
    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let n = self.model.num_joints();
        if action.len() != n {
            return Err(Error::InvalidArgument(format!("action needs {n} entries, got {}", action.len())));
        }
        let q_cmd: Vec<f64> = self
            .model
            .skeleton
            .actuated_joints()
            .zip(action)
            .map(|(j, &a)| if a.is_nan() { a } else { a.clamp(j.lower, j.upper) })
            .collect();
        let dt = self.config.dt;
        for _ in 0..self.config.substeps {
            match self.physics_step(&q_cmd, dt) {
                Ok(()) => {}
                Err(_) => return Ok(self.diverged()),
            }
        }
        let ee = match end_effector_positions(&self.model, &self.state) {
            Ok(ee) => ee,
            Err(_) => return Ok(self.diverged()),
        };
        let reference = self.reference.sample(self.phase + self.time());
        let terms = reward(&self.config.reward, &self.state, &ee, &reference)?;
        let err = tracking_error(&ee, &reference);
        let done = should_terminate(&self.model, &self.config.termination, &self.state, self.time(), Some(err));
        if done == Some(TerminationCause::Diverged) {
            return Ok(self.diverged());
        }
        Ok(EnvStep {
            obs: self.observation(),
            reward: terms,
            done,
        })
    }

    fn physics_step(&mut self, q_cmd: &[f64], dt: f64) -> Result<()> {
        let s = &self.state;
        let pd = pd_torque(&self.gains, &self.limits, q_cmd, &s.q, &s.qd)?;
        let mut act = GeneralizedForce::zeros(&self.model);
        act.base = pelvis_stabilizer(&self.model, s);
        act.rigid = &pd.torque + joint_limit_torque(&self.model, &s.q, &s.qd);
        let (next, info) = step(&self.model, s, &act, dt)?;
        if !next.is_finite() {
            return Err(Error::Diverged { time: self.time() + dt });
        }
        self.state = next;
        self.steps += 1;
        let t = self.time();
        if let Some(table) = &mut self.recording {
            record(table, &self.model, t, &self.state, pd.torque.as_slice(), &info.contacts)?;
        }
        Ok(())
    }

    fn diverged(&mut self) -> EnvStep {
        EnvStep {
            obs: DVector::zeros(self.obs_dim()),
            reward: RewardTerms::default(),
            done: Some(TerminationCause::Diverged),
        }
    }
}
