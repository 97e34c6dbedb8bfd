//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An index or requested length falls outside its valid range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Malformed input data (file contents, buffer shapes, wire formats).
    #[error("format error: {0}")]
    Format(String),

    /// A caller-supplied parameter violates a contract.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A protocol cannot run to completion with the given inputs.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A numerical procedure failed (singular system, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
