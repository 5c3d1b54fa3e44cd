pub mod causal;
pub mod cli;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod eval;
pub mod meanfield;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
