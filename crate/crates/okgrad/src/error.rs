use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("svd did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },
    #[error("expected a unit vector, got norm {norm}")]
    NotUnitVector { norm: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("bad diagonal: {0}")]
    BadDiagonal(String),
    #[error("diagonal sum {sum} is not within {tol} of a positive integer <= dimension")]
    SumNotInteger { sum: f64, tol: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dense expansion of {entries} entries exceeds cap of {cap}")]
    DenseCapExceeded { entries: usize, cap: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("rank {rank} out of range: {why}")]
    RankOutOfRange { rank: usize, why: String },
    #[error("codepoint U+{codepoint:04X} {ch:?} is not in the vocabulary")]
    UnknownCodepoint { codepoint: u32, ch: char },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dense sensitivity state needs {required} bytes, cap is {cap}")]
    MemoryCap { required: usize, cap: usize },
    #[error("enumeration over {draws} sign draws exceeds limit of {max}")]
    EnumerationTooLarge { draws: u32, max: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
