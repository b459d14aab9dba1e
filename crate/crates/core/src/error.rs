//! Error taxonomy shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A run or model configuration cannot be realized.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary file does not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// An I/O failure, annotated with the byte offset where it was detected
    /// when that is known.
    #[error("i/o error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A point set contains coincident points that break a distance-ratio
    /// estimate.
    #[error("degenerate point {index}: {reason}")]
    DegeneratePoint { index: usize, reason: String },

    /// Training diverged; the last finite-loss checkpoint is preserved.
    #[error("training diverged at step {step}; last good checkpoint: {checkpoint:?}")]
    Training {
        step: usize,
        checkpoint: Option<PathBuf>,
    },
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { offset: 0, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::InvalidArgument` with a formatted message.
#[macro_export]
macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
