//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input vector or matrix has the wrong size.
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    /// A requested size exceeds a resource guard.
    #[error("{0}")]
    TooLarge(String),

    /// A root solver could not bracket or converge.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A configuration key is missing, unknown or invalid.
    #[error("invalid configuration key `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// A data file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
