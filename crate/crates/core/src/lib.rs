//! Cost, age and convergence analysis for deadline-based federated learning.

pub mod analytic;
pub mod binomial;
pub mod convergence;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod hyperopt;
pub mod numeric;
pub mod partition;
pub mod problem;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod validate;

pub use analytic::{RoundModel, SystemConfig};
pub use error::{Error, Result};
