//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A task admits no valid initial state or cannot be completed.
    #[error("task infeasible: {0}")]
    Infeasible(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("training failed: {0}")]
    Training(String),
    /// Checkpoint or file format violation (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),
    /// A persisted library is missing or has corrupt pieces; names the file.
    #[error("library integrity: {0}")]
    Integrity(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
