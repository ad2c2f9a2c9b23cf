use thiserror::Error;

use crate::samplers::SamplerReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid output space: {0}")]
    InvalidSpace(String),
    #[error("invalid rooted tree: {0}")]
    InvalidTree(String),
    #[error("structure does not belong to the {expected} space")]
    WrongSpace { expected: &'static str },
    #[error("space has {count} structures, more than the enumeration cap {cap}")]
    CapExceeded { count: String, cap: u64 },
    #[error("input vector has zero norm")]
    ZeroInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("coupling from the past found no coalescence within {epochs} epochs")]
    EpochBudgetExhausted { epochs: u32, report: SamplerReport },
    #[error("need at least {needed} runs for the requested confidence, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
