use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{}: {}", .0.display(), .1)]
    Data(PathBuf, String),
    #[error(transparent)]
    Core(#[from] degp_core::Error),
    #[error("validation failed: {0}")]
    Validation(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
