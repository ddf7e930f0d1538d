//! Checkpoints: a versioned JSON document with the networks, observation
//! statistics, optimizer moments and update RNG state. Floats are written
//! in shortest round-trip form, so a resumed run continues bitwise.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::normalizer::ObsNormalizer;
use crate::policy::ActorCritic;
use crate::ppo::Adam;

pub const CHECKPOINT_FORMAT: &str = "flexrun-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Completed PPO updates.
    pub iteration: u64,
    pub seed: u64,
    pub model: String,
    /// Trained on a model with a flexible rod.
    pub hybrid: bool,
    pub policy: ActorCritic,
    pub normalizer: ObsNormalizer,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(RlError::Checkpoint(format!("not a checkpoint ({})", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(RlError::Checkpoint(format!(
                "version {} is not supported (need {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.policy
            .validate()
            .map_err(|e| RlError::Checkpoint(e.to_string()))?;
        if self.normalizer.dim() != self.policy.obs_dim() {
            return Err(RlError::Checkpoint("normalizer and policy dimensions differ".into()));
        }
        if self.adam.m.len() != self.policy.num_params() || self.adam.v.len() != self.policy.num_params() {
            return Err(RlError::Checkpoint("optimizer state does not match the policy".into()));
        }
        Ok(())
    }

    /// Fails unless the policy fits `obs_dim` observations and `act_dim`
    /// actions.
    pub fn check_dims(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        if self.policy.obs_dim() != obs_dim || self.policy.act_dim() != act_dim {
            return Err(RlError::Checkpoint(format!(
                "policy is {}→{}, environment needs {obs_dim}→{act_dim}",
                self.policy.obs_dim(),
                self.policy.act_dim()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
