use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed configuration document (syntax, types, unknown keys).
    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    /// Well-formed input that violates a semantic rule.
    #[error("validation error: {field}: {message}")]
    Validation { field: String, message: String },

    #[error("data error in row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] nlfr_core::Error),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation { field: field.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Validation { .. } | CliError::Data { .. } => 1,
            CliError::Io { .. } | CliError::Core(_) | CliError::Runtime(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
