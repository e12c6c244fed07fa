//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad or unknown configuration key/value.
    #[error("config error: {0}")]
    Config(String),

    /// Missing, misaligned, or malformed input data.
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary or text format did not decode.
    #[error("format error: {0}")]
    Format(String),

    /// NaN/Inf or another numeric failure during computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Command-line misuse.
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
