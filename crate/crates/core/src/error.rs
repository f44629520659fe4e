use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("hamming requires equal lengths (got {left} and {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("token {token} is not in a vocabulary of size {size}")]
    InvalidToken { token: u32, size: usize },

    #[error("edit count {e} out of range 0..={max}")]
    EditOutOfRange { e: usize, max: usize },

    #[error("reference length {m} too large for the exact oracle (max {max})")]
    OracleTooLarge { m: usize, max: usize },

    #[error("space too large to enumerate ({v}^{len} sequences)")]
    SpaceTooLarge { v: usize, len: usize },

    #[error("delta mode has no finite partition log")]
    DeltaMode,

    #[error("invalid temperature {0}")]
    InvalidTemperature(f64),

    #[error("degenerate importance weights")]
    DegenerateWeights,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("point is not strictly inside the simplex: {0}")]
    NotInterior(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("certificate failed: {0}")]
    CertificateFailed(String),

    #[error("zero-probability target under the model")]
    ZeroProbability,

    #[error("sequence outside the model support")]
    OutsideSupport,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
