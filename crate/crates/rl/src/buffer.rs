//! Rollout storage. Transitions of one episode are contiguous; every
//! episode, including one cut off at the end of collection, closes with
//! `end = true`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RlError};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Normalized observation seen by the policy.
    pub obs: DVector<f64>,
    pub action: DVector<f64>,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    /// The environment terminated the episode here.
    pub done: bool,
    /// Last transition of an episode (terminal or cut off).
    pub end: bool,
    /// Successor value used at an episode end: 0 if `done`, otherwise the
    /// critic's value of the next observation.
    pub boundary_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Undiscounted returns of episodes that finished during collection.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    /// Raw (unnormalized) observations, for normalizer statistics.
    pub raw_obs: Vec<DVector<f64>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Appends `other` after the current contents.
    pub fn extend(&mut self, other: RolloutBuffer) {
        self.transitions.extend(other.transitions);
        self.episode_returns.extend(other.episode_returns);
        self.episode_lengths.extend(other.episode_lengths);
        self.raw_obs.extend(other.raw_obs);
    }

    pub fn reward_sum(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(last) = self.transitions.last() {
            if !last.end {
                return Err(RlError::Shape("buffer ends inside an episode".into()));
            }
        }
        if self.transitions.iter().any(|t| t.done && !t.end) {
            return Err(RlError::Shape("terminal transition not marked as episode end".into()));
        }
        Ok(())
    }

    /// Observations of the selected transitions as columns.
    pub fn obs_matrix(&self, idx: &[usize]) -> DMatrix<f64> {
        let dim = self.transitions.first().map_or(0, |t| t.obs.len());
        DMatrix::from_fn(dim, idx.len(), |r, c| self.transitions[idx[c]].obs[r])
    }

    pub fn action_matrix(&self, idx: &[usize]) -> DMatrix<f64> {
        let dim = self.transitions.first().map_or(0, |t| t.action.len());
        DMatrix::from_fn(dim, idx.len(), |r, c| self.transitions[idx[c]].action[r])
    }
}
