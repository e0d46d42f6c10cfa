use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("feature selection failed: {0}")]
    Selection(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("training failed at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("scale error: {0}")]
    Scale(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True when the root cause is a numerical/training failure rather than
    /// bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Training { .. } => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
