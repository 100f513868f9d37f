use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("solution blew up: {0}")]
    SolutionBlowup(String),

    #[error("step limit of {max_steps} reached at t = {t} before t_end = {t_end}")]
    StepLimitExceeded { max_steps: usize, t: f64, t_end: f64 },

    #[error("trajectory of {n_t} steps is too short: need {needed} for two bundles")]
    InsufficientHorizon { n_t: usize, needed: usize },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips [`Error::Trajectory`] annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Trajectory { source, .. } => source.root(),
            other => other,
        }
    }
}
