use std::path::PathBuf;

use ccc_core::CccError;

/// Errors surfaced by the CLI, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("schema error in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CccError),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Schema { .. } => 2,
            CliError::MissingInput(_) => 3,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(_) => 2,
            CliError::Gradcheck(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path)
        } else {
            CliError::Io { path, source }
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Schema {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
