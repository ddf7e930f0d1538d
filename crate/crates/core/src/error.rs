use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned input: {0}")]
    IllConditioned(String),

    #[error("out of domain: {0}")]
    Domain(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation diverged at t = {time:.6} s")]
    Diverged { time: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Model(e.to_string())
    }
}
