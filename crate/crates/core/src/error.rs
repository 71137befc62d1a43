use std::path::PathBuf;

/// Errors raised by the acquisition library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The measurements cannot have been produced by any signal in the
    /// support of the prior.
    #[error("infeasible measurement: {0}")]
    InfeasibleMeasurement(String),

    #[error("candidate set exhausted: {needed} needed, {available} remaining")]
    ExhaustedCandidates { needed: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration or files.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Io { .. } | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
