//! Crate-wide error type. Variants map onto the CLI exit-code contract:
//! configuration problems, broken data, and numeric breakdown are distinct.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// Bad argument, bad configuration value, or a precondition violated
    /// before any work starts.
    #[error("config: {0}")]
    Config(String),

    /// Malformed or inconsistent data: files, volumes, manifests, coverage
    /// holes, shape mismatches discovered while processing.
    #[error("data: {0}")]
    Data(String),

    /// Numeric failure at runtime: NaN voxels, zero dynamic range, degenerate
    /// statistics.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Checkpoint file rejected: bad magic, truncated payload, or a network
    /// spec that does not match the requested configuration.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
