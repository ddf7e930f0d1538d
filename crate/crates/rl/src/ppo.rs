//! Clipped-surrogate PPO with a mean-squared-error value loss, hand-derived
//! gradients and Adam.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::RolloutBuffer;
use crate::error::{Result, RlError};
use crate::gae::{gae, normalize, DEFAULT_GAMMA, DEFAULT_LAMBDA};
use crate::policy::{entropy, ActorCritic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm clip.
    pub max_grad_norm: f64,
    /// Remaining epochs are skipped once the approximate KL divergence of
    /// a minibatch exceeds this.
    pub max_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            clip: 0.2,
            epochs: 10,
            minibatch: 256,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            max_kl: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(RlError::Config(what.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be >= 0");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must be in (0, 1)");
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return bad("epochs and minibatch must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must be in [0, 1]");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0 && self.max_kl > 0.0) {
            return bad("value_coef, entropy_coef >= 0; max_grad_norm, max_kl > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&PpoConfig> for LossSpec {
    fn from(c: &PpoConfig) -> Self {
        Self {
            clip: c.clip,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

/// Columns are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub obs: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    /// `policy_loss + c_v value_loss − c_e entropy`, minimised.
    pub loss: f64,
    /// Negated clipped surrogate.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    /// Probability ratios per sample.
    pub ratios: Vec<f64>,
    /// `∂loss/∂θ` in [`ActorCritic::flatten`] order.
    pub grad: Vec<f64>,
}

/// Loss and its exact gradient on one minibatch.
pub fn loss_and_gradient(ac: &ActorCritic, mb: &Minibatch, spec: &LossSpec) -> LossEval {
    let b = mb.obs.ncols();
    let bf = b as f64;
    let (means, actor_cache) = ac.actor.forward(&mb.obs);
    let std = ac.log_std.map(f64::exp);
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut d_means = DMatrix::zeros(means.nrows(), b);
    let mut d_log_std = DVector::zeros(ac.log_std.len());
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let mut ratios = Vec::with_capacity(b);
    for j in 0..b {
        let mut lp = 0.0;
        for i in 0..means.nrows() {
            let z = (mb.actions[(i, j)] - means[(i, j)]) / std[i];
            lp += -0.5 * z * z - ac.log_std[i] - half_log_2pi;
        }
        let log_ratio = lp - mb.old_log_probs[j];
        let rho = log_ratio.exp();
        ratios.push(rho);
        let a = mb.advantages[j];
        let s1 = rho * a;
        let s2 = rho.clamp(1.0 - spec.clip, 1.0 + spec.clip) * a;
        surrogate += s1.min(s2);
        kl += (rho - 1.0) - log_ratio;
        if (rho - 1.0).abs() > spec.clip {
            clipped += 1;
        }
        // ∂(−mean surrogate)/∂ log π for this sample.
        let g = if s1 <= s2 { -rho * a / bf } else { 0.0 };
        if g != 0.0 {
            for i in 0..means.nrows() {
                let diff = mb.actions[(i, j)] - means[(i, j)];
                let var = std[i] * std[i];
                d_means[(i, j)] = g * diff / var;
                d_log_std[i] += g * (diff * diff / var - 1.0);
            }
        }
    }
    let ent = entropy(&ac.log_std);
    d_log_std.add_scalar_mut(-spec.entropy_coef);

    let (values, critic_cache) = ac.critic.forward(&mb.obs);
    let mut value_loss = 0.0;
    let mut d_values = DMatrix::zeros(1, b);
    for j in 0..b {
        let e = values[(0, j)] - mb.returns[j];
        value_loss += e * e / bf;
        d_values[(0, j)] = 2.0 * spec.value_coef * e / bf;
    }

    let actor_grad = ac.actor.backward(&actor_cache, &d_means);
    let critic_grad = ac.critic.backward(&critic_cache, &d_values);
    let mut grad = Vec::with_capacity(ac.num_params());
    actor_grad.flatten_into(&mut grad);
    grad.extend(d_log_std.iter());
    critic_grad.flatten_into(&mut grad);

    let policy_loss = -surrogate / bf;
    LossEval {
        loss: policy_loss + spec.value_coef * value_loss - spec.entropy_coef * ent,
        policy_loss,
        value_loss,
        entropy: ent,
        approx_kl: kl / bf,
        clip_frac: clipped as f64 / bf,
        ratios,
        grad,
    }
}

/// Probability ratios of all buffer transitions under `ac`.
pub fn buffer_ratios(ac: &ActorCritic, buffer: &RolloutBuffer) -> Vec<f64> {
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let mb = Minibatch {
        obs: buffer.obs_matrix(&idx),
        actions: buffer.action_matrix(&idx),
        old_log_probs: buffer.transitions.iter().map(|t| t.log_prob).collect(),
        advantages: vec![0.0; idx.len()],
        returns: vec![0.0; idx.len()],
    };
    let spec = LossSpec {
        clip: 0.2,
        value_coef: 0.0,
        entropy_coef: 0.0,
    };
    loss_and_gradient(ac, &mb, &spec).ratios
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub epochs_run: usize,
    /// Minibatches dropped because the loss was not finite.
    pub skipped: usize,
    /// `max |ρ − 1|` over the buffer before the first gradient step.
    pub initial_ratio_error: f64,
    pub early_stop: bool,
}

/// Advantages (normalized) and returns of the buffer.
pub fn advantages(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    buffer.validate()?;
    let t = &buffer.transitions;
    let rewards: Vec<f64> = t.iter().map(|x| x.reward).collect();
    let values: Vec<f64> = t.iter().map(|x| x.value).collect();
    let ends: Vec<bool> = t.iter().map(|x| x.end).collect();
    let boundary: Vec<f64> = t.iter().map(|x| x.boundary_value).collect();
    let (mut adv, ret) = gae(&rewards, &values, &ends, &boundary, gamma, lambda)?;
    normalize(&mut adv);
    Ok((adv, ret))
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Runs `epochs` passes of shuffled minibatch Adam steps over the buffer.
pub fn ppo_update<R: Rng>(
    ac: &mut ActorCritic,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(RlError::Shape("empty rollout buffer".into()));
    }
    if adam.m.len() != ac.num_params() {
        return Err(RlError::Shape("optimizer state does not match the network".into()));
    }
    let (adv, ret) = advantages(buffer, cfg.gamma, cfg.lambda)?;
    let spec = LossSpec::from(cfg);
    let mut stats = UpdateStats {
        initial_ratio_error: buffer_ratios(ac, buffer)
            .iter()
            .map(|r| (r - 1.0).abs())
            .fold(0.0, f64::max),
        ..UpdateStats::default()
    };
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut params = ac.flatten();
    let mut count = 0usize;
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mb = Minibatch {
                obs: buffer.obs_matrix(chunk),
                actions: buffer.action_matrix(chunk),
                old_log_probs: chunk.iter().map(|&i| buffer.transitions[i].log_prob).collect(),
                advantages: chunk.iter().map(|&i| adv[i]).collect(),
                returns: chunk.iter().map(|&i| ret[i]).collect(),
            };
            let mut eval = loss_and_gradient(ac, &mb, &spec);
            if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
                log::warn!("skipping minibatch with non-finite loss {}", eval.loss);
                stats.skipped += 1;
                continue;
            }
            if eval.approx_kl > cfg.max_kl {
                stats.early_stop = true;
                break 'epochs;
            }
            clip_norm(&mut eval.grad, cfg.max_grad_norm);
            adam.step(cfg.learning_rate, &mut params, &eval.grad);
            ac.load(&params)?;
            ac.clamp_log_std();
            params = ac.flatten();
            stats.policy_loss += eval.policy_loss;
            stats.value_loss += eval.value_loss;
            stats.entropy += eval.entropy;
            stats.approx_kl += eval.approx_kl;
            stats.clip_frac += eval.clip_frac;
            count += 1;
        }
        stats.epochs_run += 1;
    }
    if count > 0 {
        let n = count as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.approx_kl /= n;
        stats.clip_frac /= n;
    }
    Ok(stats)
}
