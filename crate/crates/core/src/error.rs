use thiserror::Error;

use crate::data::DataError;
use crate::gaussian::GaussianError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("session already decided; no further reveals accepted")]
    SessionTerminal,
    #[error("no unrevealed sensitive feature left to select")]
    NothingToReveal,
    #[error("unknown selector `{0}`")]
    UnknownSelector(String),
    #[error("{0}")]
    Budget(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by numerics (singular blocks, non-finite
    /// values, diverging training) rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Gaussian(GaussianError::Singular)
                | Error::Model(ModelError::NonFiniteLoss { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
