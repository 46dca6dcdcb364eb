//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: expected {expected:?} coordinates, got {got:?}")]
    FrameMismatch {
        expected: crate::warp::CoordFrame,
        got: crate::warp::CoordFrame,
    },

    #[error("singular transform: |det| = {det:e} below threshold")]
    SingularTransform { det: f64 },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-parseable category used for CLI exit codes and one-line errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Format(_) => "data-format",
            Error::Io(_) => "io",
            Error::Json(_) => "data-format",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::Training(_) => "training",
            Error::Generation(_) => "generation",
            Error::EmptyInput(_) => "empty-input",
            Error::IndexOutOfRange(_) => "index",
            _ => "invalid-argument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
