use thiserror::Error;

/// Errors produced by the analysis, simulation and training routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("probability {0} is outside [0, 1]")]
    ProbabilityDomain(f64),

    /// An expectation that is infinite because no round can ever succeed.
    #[error("{metric} diverges: success probability is zero")]
    DivergentMetric { metric: &'static str },

    #[error("update contract violated: {0}")]
    ContractViolation(String),

    #[error("aggregation weights are degenerate (sum {0})")]
    DegenerateWeights(f64),

    #[error("invalid bound constants: {0}")]
    InvalidBoundConstants(String),

    #[error("need at least {required} replications, got {got}")]
    InsufficientReplications { required: usize, got: usize },

    #[error("objective is not finite anywhere on [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
