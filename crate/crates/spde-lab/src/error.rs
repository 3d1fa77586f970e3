//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A multi-index or mode index lies outside the valid range.
    #[error("invalid mode index: {0}")]
    InvalidIndex(String),

    /// A scalar argument lies outside its admissible domain.
    #[error("parameter out of range: {0}")]
    InvalidParameter(String),

    /// Field dimensions or lengths do not match.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The requested operation is not defined for this configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Experiment configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Input data for an analysis routine is unusable.
    #[error("data error: {0}")]
    Data(String),

    /// Every trajectory of an ensemble diverged.
    #[error("all {0} trajectories diverged")]
    AllTrajectoriesDiverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
