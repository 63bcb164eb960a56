use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Kernel matrix stayed indefinite after the whole jitter ladder.
    #[error("ill-conditioned kernel matrix (last jitter tried: {jitter:e})")]
    IllConditioned { jitter: f64 },

    /// Same as [`Error::IllConditioned`], tagged with the pose axis that failed.
    #[error("axis {axis}: ill-conditioned kernel matrix (last jitter tried: {jitter:e})")]
    AxisIllConditioned { axis: usize, jitter: f64 },

    #[error("model has no observations")]
    NotFitted,

    #[error("candidate pool exhausted")]
    PoolExhausted,

    /// Failure inside a campaign, with the 1-based iteration it happened at.
    #[error("iteration {iteration}: {source}")]
    Campaign {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach an axis index to conditioning failures; other errors pass through.
    pub(crate) fn on_axis(self, axis: usize) -> Self {
        match self {
            Error::IllConditioned { jitter } => Error::AxisIllConditioned { axis, jitter },
            other => other,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Campaign {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
