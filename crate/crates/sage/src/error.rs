//! Error types shared across the crate.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum SageError {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Violation of an operation's calling contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed binary file; `offset` is the byte position of the defect.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    /// Bad value in a record-oriented file; `row` is the 0-based data row.
    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },

    /// Modality streams that cannot be brought into temporal correspondence.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Evaluation-time dataset inconsistency.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Training-time failure (degenerate batch, numeric blow-up).
    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SageError>;
