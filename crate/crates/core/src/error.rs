use thiserror::Error;

use crate::inference::FitError;
use crate::model::ModelError;
use crate::timetags::TagError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; each module also exposes its own narrower type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tags(#[from] TagError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("malformed histogram file: {0}")]
    Format(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}
