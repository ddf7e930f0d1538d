use thiserror::Error;

pub type Result<T> = std::result::Result<T, RlError>;

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Core(#[from] flexrun_core::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("rollout worker {worker} failed: {message}")]
    Worker { worker: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
