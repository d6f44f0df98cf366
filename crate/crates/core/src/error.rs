use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("length mismatch: expected {expected} items, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pair balancing needs an even number of vectors, got {0}")]
    OddLength(usize),

    #[error("run diverged at epoch {epoch}: non-finite parameter")]
    Divergence { epoch: usize },

    #[error("metric unavailable: {0}")]
    Unavailable(String),

    #[error("invalid theorem constants: {0}")]
    InvalidConstants(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trace too short: need more than {needed} rows, got {got}")]
    InsufficientTrace { needed: usize, got: usize },
}
