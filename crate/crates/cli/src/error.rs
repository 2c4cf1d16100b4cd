use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("no such file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("training diverged at update {0}")]
    Diverged(usize),

    #[error(transparent)]
    Core(#[from] imtforge::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for anything the caller got wrong, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::MissingFile(_) => 2,
            _ => 1,
        }
    }
}

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}
