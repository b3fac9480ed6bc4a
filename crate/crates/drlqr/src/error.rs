use std::path::PathBuf;

use drlqr_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Process exit code: 2 for configuration errors, 3 for rank-deficient
    /// identification, 4 when no stabilizing controller was found, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Core(e) => match e {
                CoreError::RankDeficient { .. } | CoreError::SingularFisher | CoreError::NotIdentifiable(_) => 3,
                CoreError::NotStabilizable(_)
                | CoreError::NoStabilizingCandidate
                | CoreError::AllScenariosUnstable => 4,
                CoreError::InvalidArgument(_) | CoreError::InvalidDelta(_) => 2,
                _ => 1,
            },
            _ => 1,
        }
    }
}
