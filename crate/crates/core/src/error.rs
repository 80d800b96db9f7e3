use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector where a direction is required")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("input too large for exhaustive enumeration: n = {n} (max {max})")]
    TooLarge { n: usize, max: usize },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("label {label} outside 1..={k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("prototype store has not been trained (zero anchors)")]
    UntrainedStore,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("bad layer dimensions: {0}")]
    BadDims(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad config key `{key}`: {msg}")]
    BadConfig { key: String, msg: String },
    #[error("batch size {m} smaller than class count {k}")]
    BatchTooSmall { m: usize, k: usize },
    #[error("bad fold count k = {k}: {msg}")]
    BadK { k: usize, msg: String },
    #[error("both truth classes are required, found only one")]
    OneClassOnly,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("numeric failure at iteration {iteration}: {msg}")]
    Numeric { iteration: usize, msg: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
