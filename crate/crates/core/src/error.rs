use alloc::string::String;

use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("invalid configuration `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("sample lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate comparison: paired differences have zero variance")]
    DegenerateComparison,
    #[error("too few paired samples: {0}")]
    TooFewSamples(usize),
    #[error("forward output of the proposed variant carries no latent statistics")]
    MissingLatent,
    #[error("input {h}x{w} is not divisible by the total downsampling factor {factor}")]
    Resolution { h: usize, w: usize, factor: usize },
    #[error("parameter vector has {got} entries, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn config_err(key: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { key, reason: reason.into() }
}
