//! Diagonal Gaussian policy with a state-independent log standard
//! deviation, and a separate value network.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::mlp::Mlp;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const HIDDEN: [usize; 2] = [64, 64];

/// Initial policy standard deviation, rad.
pub const INITIAL_STD: f64 = 0.3;

/// Gain of the policy output layer at initialisation, so initial actions
/// stay near zero.
const ACTOR_OUT_GAIN: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub log_std: DVector<f64>,
    pub critic: Mlp,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl ActorCritic {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let actor = Mlp::init(&sizes(obs_dim, hidden, act_dim), ACTOR_OUT_GAIN, rng)?;
        let critic = Mlp::init(&sizes(obs_dim, hidden, 1), 1.0, rng)?;
        Ok(Self {
            actor,
            log_std: DVector::from_element(act_dim, INITIAL_STD.ln()),
            critic,
        })
    }

    /// All weights and biases zero, log-std at its initial value.
    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Result<Self> {
        Ok(Self {
            actor: Mlp::zeros(&sizes(obs_dim, hidden, act_dim))?,
            log_std: DVector::from_element(act_dim, INITIAL_STD.ln()),
            critic: Mlp::zeros(&sizes(obs_dim, hidden, 1))?,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Mean and standard deviation of the action distribution.
    pub fn policy_forward(&self, s: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.actor.forward_one(s), self.log_std.map(f64::exp))
    }

    pub fn value(&self, s: &DVector<f64>) -> f64 {
        self.critic.forward_one(s)[0]
    }

    pub fn values(&self, obs: &DMatrix<f64>) -> DVector<f64> {
        self.critic.forward(obs).0.row(0).transpose()
    }

    /// Draws an action; returns it with its log-density.
    pub fn sample<R: Rng>(&self, s: &DVector<f64>, rng: &mut R) -> (DVector<f64>, f64) {
        let (mean, std) = self.policy_forward(s);
        let a = DVector::from_iterator(
            mean.len(),
            mean.iter().zip(std.iter()).map(|(m, sd)| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            }),
        );
        let lp = log_prob(&mean, &std, &a);
        (a, lp)
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.log_std.len() + self.critic.num_params()
    }

    /// Actor, log-std, critic.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.actor.flatten_into(&mut out);
        out.extend(self.log_std.iter());
        self.critic.flatten_into(&mut out);
        out
    }

    pub fn load(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(RlError::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut k = self.actor.load_from(params)?;
        for v in self.log_std.iter_mut() {
            *v = params[k];
            k += 1;
        }
        self.critic.load_from(&params[k..])?;
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.apply(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        self.actor.validate()?;
        self.critic.validate()?;
        if self.log_std.len() != self.act_dim() || self.critic.output_dim() != 1 {
            return Err(RlError::Shape("policy heads do not match".into()));
        }
        if self.critic.input_dim() != self.obs_dim() {
            return Err(RlError::Shape("actor and critic inputs differ".into()));
        }
        Ok(())
    }
}

/// Log-density of a diagonal Gaussian.
pub fn log_prob(mean: &DVector<f64>, std: &DVector<f64>, a: &DVector<f64>) -> f64 {
    mean.iter()
        .zip(std.iter())
        .zip(a.iter())
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Differential entropy of a diagonal Gaussian with the given log-stds.
pub fn entropy(log_std: &DVector<f64>) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}
