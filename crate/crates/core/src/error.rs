use thiserror::Error;

use crate::analysis::FitError;
use crate::pulse::SequenceError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("unknown site `{0}`")]
    UnknownSite(String),

    #[error("sampling failure: {0}")]
    SamplingFailure(String),

    #[error("no rotating frame for driven site `{0}`")]
    MissingFrame(String),

    #[error("site `{0}` is declared driven but has no drive")]
    MissingDrive(String),

    #[error(transparent)]
    Sequence(#[from] SequenceError),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error("realization {index}: {source}")]
    Realization { index: usize, source: Box<Error> },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericDomain(msg.into())
    }
}
