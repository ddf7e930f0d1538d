pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod imitation;
pub mod liegroup;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod rod;
pub mod skeleton;
pub mod sweep;
pub mod table;
pub mod trajectory;

pub use error::{Error, Result};
