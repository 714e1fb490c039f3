use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called in a state that does not allow it.
    #[error("usage error: {0}")]
    Usage(String),

    /// Matrix or vector dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A binary file does not follow the expected layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The requested operation is not defined for this input (e.g. tabular
    /// export of a continuous environment, or an oversized table).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A loss or parameter became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Unsupported(_) | Error::Shape(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::NonFinite(_) => 4,
        }
    }
}
