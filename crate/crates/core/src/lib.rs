//! Mamba sequence models as multi-step predictors for model predictive control.

pub mod error;
pub mod harness;
pub mod mamba;
pub mod mpc;
pub mod plants;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;
