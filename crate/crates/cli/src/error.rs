use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, unparsable or invalid configuration.
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    /// Input rejected or a checked condition failed.
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] rmc_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn config(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for rejected input or failed checks, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Validation(_) => 1,
            CliError::Core(_) | CliError::Io { .. } | CliError::Csv { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
