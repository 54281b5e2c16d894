use thiserror::Error;

/// Errors raised across the benchmark toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("capacity exceeded: {what} (n = {n}, limit = {limit})")]
    Capacity {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("embedding infeasible: {reason}")]
    EmbeddingInfeasible { reason: String, attempts: usize },

    #[error("embedding does not match model: {0}")]
    EmbeddingMismatch(String),

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("missing oracle data: {0}")]
    MissingOracle(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
