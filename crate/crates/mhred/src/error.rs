//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any part of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A shape is invalid on its own (zero dimension, wrong rank, bad element count).
    #[error("invalid shape in {op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    /// An index (token id, row id) is outside the valid range.
    #[error("index {index} out of range for size {size} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Transcript or dataset files that do not match the documented schema.
    #[error("parse error in session {session} turn {turn}: {msg}")]
    Parse {
        session: String,
        turn: usize,
        msg: String,
    },

    /// Checkpoint or feature files that cannot be decoded.
    #[error("file format error: {0}")]
    Format(String),

    /// Mismatched or impossible configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training aborted on a non-finite loss.
    #[error("non-finite loss ({value}) at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
