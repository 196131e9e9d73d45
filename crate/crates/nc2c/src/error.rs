use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad flags, configuration values or missing inputs, found before any
    /// stage runs.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] nc2c_core::Error),

    #[error(transparent)]
    Gan(#[from] nc2c_gan::GanError),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
