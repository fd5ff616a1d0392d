use thiserror::Error;

/// Errors produced by model construction, estimation and testing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("singular matrix: {what} (condition number {condition:.3e})")]
    Singular { what: String, condition: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

pub(crate) fn dim<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
