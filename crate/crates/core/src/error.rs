//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed IDX bytes (bad magic, wrong geometry, truncated payload).
    #[error("format error: {0}")]
    Format(String),

    /// Image and label files disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Not enough samples in the pool to satisfy a partition request.
    #[error("capacity error: digit {digit} needs {requested} samples but only {available} remain")]
    Capacity {
        digit: u8,
        requested: usize,
        available: usize,
    },

    #[error("invalid concept: {0}")]
    InvalidConcept(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
