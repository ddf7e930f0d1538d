//! Imitation-learning stack: MLP actor-critic, GAE, PPO with Adam,
//! observation normalization, checkpoints and the parallel trainer.

pub mod buffer;
pub mod checkpoint;
pub mod error;
pub mod gae;
pub mod mlp;
pub mod normalizer;
pub mod policy;
pub mod ppo;
pub mod trainer;

pub use error::{Result, RlError};
