//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shape mismatch,
    /// out-of-range value, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file did not match its expected on-disk format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A lookup by identifier found nothing.
    #[error("not found: {0}")]
    NotFound(String),

    /// A forward pass or loss produced a non-finite value.
    #[error("numeric failure in {context}: non-finite value at epoch {epoch:?}")]
    NumericFailure {
        context: String,
        epoch: Option<usize>,
    },

    /// Correlation is undefined for the given inputs (constant column or n < 2).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
