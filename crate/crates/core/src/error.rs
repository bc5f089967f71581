use thiserror::Error;

use crate::fmw::FmwError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite calibration data")]
    NonFinite,
    #[error("invalid fixed-point format: {0}")]
    Format(String),
    #[error("code {code} outside the range of a {width}-bit format")]
    CodeRange { code: i64, width: u8 },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing operand {0} for {1:?}")]
    MissingOperand(&'static str, crate::fixpoint::VpuKind),
    #[error("group dimension must be 2^k (got {0})")]
    NotPowerOfTwo(usize),
    #[error("{dim} is not divisible into {groups} groups of power-of-two width")]
    GroupRule { dim: usize, groups: usize },
    #[error("scale must be positive (got {0})")]
    NonPositiveScale(f64),
    #[error("exponential mode requires non-positive input (got {0})")]
    PositiveExpInput(f64),
    #[error("empty calibration sample")]
    EmptySample,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: {msg}")]
    BadTensor { name: String, msg: String },
    #[error("checkpoint is already quantized")]
    AlreadyQuantized,
    #[error("checkpoint is not quantized")]
    NotQuantized,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenRange { id: usize, vocab: usize },
    #[error("cache/mode mismatch: {0}")]
    Cache(String),
    #[error(transparent)]
    Fmw(#[from] FmwError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
