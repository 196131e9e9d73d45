use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape { expected: Vec<usize>, found: Vec<usize> },

    #[error("invalid training state: {0}")]
    State(String),

    #[error("non-finite loss at iteration {iteration} ({term}); batch dumped to {dump:?}")]
    NonFinite {
        iteration: u64,
        term: &'static str,
        dump: Option<PathBuf>,
    },

    #[error("corrupt checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GanError>;
