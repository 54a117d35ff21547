use std::path::{Path, PathBuf};

use cmi_cusum_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for configuration and input errors, 3 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Parse { .. } => 2,
            AppError::Core(
                CoreError::InvalidConfig(_)
                | CoreError::UnknownScenario(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::OutOfRange(_),
            ) => 2,
            AppError::Io { .. } | AppError::Core(_) | AppError::Runtime(_) => 3,
        }
    }
}
