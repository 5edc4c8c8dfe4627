//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index (token id, position) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A class label is out of range for its task.
    #[error("label out of range: {0}")]
    Label(String),

    /// An operation parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Optimizer state is inconsistent with the parameters it drives.
    #[error("optimizer state: {0}")]
    OptimizerState(String),

    /// A model or run configuration is invalid.
    #[error("invalid config: {0}")]
    Config(String),

    /// A corpus could not be ingested.
    #[error("ingestion: {0}")]
    Ingestion(String),

    /// A dataset file does not match the declared schema.
    #[error("schema: {0}")]
    Schema(String),

    /// A train/validation split cannot be formed.
    #[error("split: {0}")]
    Split(String),

    /// Task registry misuse (duplicate or unknown task).
    #[error("task registry: {0}")]
    Registry(String),

    /// No usable data where some was required.
    #[error("data: {0}")]
    Data(String),

    /// A checkpoint file is malformed or truncated.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Evaluation requested on an empty or degenerate input.
    #[error("evaluation: {0}")]
    Evaluation(String),

    /// Operator-facing argument validation (CLI surface).
    #[error("validation: {0}")]
    Validation(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for validation-class failures,
    /// 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Validation(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
