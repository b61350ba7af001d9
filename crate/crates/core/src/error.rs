use thiserror::Error;

/// Errors produced by the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema violation in column `{column}`: {message}")]
    Schema { column: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
