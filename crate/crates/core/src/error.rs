//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data failed schema or invariant validation.
    #[error("validation: {0}")]
    Validation(String),

    /// An estimation step could not be completed.
    #[error("estimation: {0}")]
    Estimation(String),

    /// An iterative solver hit its cap before reaching tolerance.
    #[error("no convergence after {iterations} iterations (last delta {last_delta:e})")]
    NoConvergence { iterations: usize, last_delta: f64 },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}
