//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FascError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input data; `line` is 1-based where applicable.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// An internal contract was broken; indicates a bug, not bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl FascError {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        FascError::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        FascError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, FascError>;
