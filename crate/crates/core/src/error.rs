//! Crate-wide error type. Everything fallible returns [`Result`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of bounds for length {len}")]
    OutOfBounds { index: usize, len: usize },

    #[error("sum tree holds no mass")]
    EmptyTree,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale or mismatched tape: {0}")]
    InvalidTape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid head mask: {0}")]
    InvalidMask(String),

    #[error("episode already finished; reset the environment")]
    EpisodeFinished,

    #[error("empty input")]
    EmptyInput,

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
