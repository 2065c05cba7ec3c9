use thiserror::Error;

/// Errors raised by the learners, the controller and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("gradient norm {norm} exceeds the declared bound {bound}")]
    GradientBound { norm: f64, bound: f64 },

    #[error("action norm {norm} exceeds the action bound {bound}")]
    ActionBound { norm: f64, bound: f64 },

    #[error("wealth fixed point has no self-consistent branch at round {round} (prev wealth {wealth_prev})")]
    SolverFailure { round: usize, wealth_prev: f64 },

    #[error("round {round} is beyond the horizon {horizon}")]
    HorizonExceeded { round: usize, horizon: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("call out of protocol order: {0}")]
    Protocol(&'static str),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("interval [{a}:{b}] is out of range for a trace of {len} rounds")]
    IntervalOutOfRange { a: usize, b: usize, len: usize },

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
