use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit code for bad inputs: missing files, malformed data, incompatible artifacts.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for numerical failures: non-finite objectives, supercritical parameters.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Model { context: String, source: semhawkes::Error },

    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model { source, .. } if source.is_numerical() => EXIT_NUMERICAL,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        }
    }
}

/// Attaches a context string to core errors.
pub(crate) trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for semhawkes::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Model {
            context: what.into(),
            source,
        })
    }
}
