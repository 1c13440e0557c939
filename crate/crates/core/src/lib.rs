pub mod baselines;
pub mod error;
pub mod exec;
pub mod inference;
pub mod lasso;
pub mod numerics;
pub mod projection;
pub mod simulation;
pub mod types;

pub use error::{Error, Result};
