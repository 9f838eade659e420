use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("Newton iteration diverged at step {step} (residual history {residuals:?})")]
    NewtonDiverged { step: usize, residuals: Vec<f64> },

    #[error("scheme consistency check failed at step {step}: {detail}")]
    Consistency { step: usize, detail: String },

    #[error("{failed} of {total} samples failed, above the allowed fraction")]
    TooManyFailures { failed: usize, total: usize },

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
