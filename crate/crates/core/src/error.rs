use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no documents")]
    NoDocuments,

    #[error("empty vocabulary (min_count = {min_count})")]
    EmptyVocabulary { min_count: usize },

    #[error("period {period} out of range 1..={periods}")]
    PeriodOutOfRange { period: usize, periods: usize },

    #[error("period {period}: {message}")]
    Period { period: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{0}")]
    Statistics(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }

    pub(crate) fn period(period: usize, message: impl Into<String>) -> Self {
        Error::Period {
            period,
            message: message.into(),
        }
    }

    /// Validation failures are reported with exit code 1, everything else with 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Parse { .. } | Error::NoDocuments
        )
    }
}
