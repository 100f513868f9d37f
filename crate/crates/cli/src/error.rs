use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mppde_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but cannot be interpreted.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), msg: msg.into() }
    }

    /// 2 bad input, 3 numerical failure, 4 missing checkpoint, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use mppde_core::Error as E;
        match self {
            CliError::Core(e) => match e.root() {
                E::MissingCheckpoint(_) => 4,
                E::SolutionBlowup(_) | E::StepLimitExceeded { .. } => 3,
                E::NotScalar(_) | E::Trajectory { .. } => 1,
                _ => 2,
            },
            CliError::Usage(_) | CliError::Format { .. } => 2,
            CliError::Io { .. } => 1,
        }
    }
}
