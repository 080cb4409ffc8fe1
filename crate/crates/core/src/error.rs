use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("bin index {index} out of range for factor with {bins} bins")]
    BinOutOfRange { index: usize, bins: usize },

    #[error("scenario out of bounds: factor `{factor}` value {value} not in [{lower}, {upper}]")]
    OutOfBounds {
        factor: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("examiner protocol violation: {0}")]
    Protocol(String),

    #[error("cholesky factorization failed after jitter escalation (last jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("internal state inconsistency: {0}")]
    Internal(String),

    #[error("grid of {points} points exceeds budget of {budget}")]
    BudgetExceeded { points: u128, budget: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
