use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// First violated [`DecoderConfig`](crate::DecoderConfig) invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("vocab_size must be at least 2 (got {0})")]
    VocabSize(usize),
    #[error("sid_length must be at least 1 (got {0})")]
    SidLength(usize),
    #[error("dense_depth must satisfy 0 <= d < sid_length (got d={dense_depth}, L={sid_length})")]
    DenseDepth { dense_depth: usize, sid_length: usize },
    #[error("beam_width must be at least 1")]
    BeamWidth,
    #[error("batch_size must be at least 1")]
    BatchSize,
    #[error("neg_inf must be finite and <= -1e10 (got {0})")]
    NegInf(f64),
}

/// Failures while decoding a serialized index.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("stream truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed index: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("constraint set is empty")]
    EmptyConstraints,
    #[error("semantic id has length {found}, expected {expected}")]
    SidLength { found: usize, expected: usize },
    #[error("token {token} at position {position} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, position: usize, vocab_size: usize },
    #[error("index needs {0} states, more than fit in a 32-bit state id")]
    StateOverflow(u128),
    #[error("dense masks need {needed} bytes, over the configured budget of {budget}")]
    DenseBudget { needed: u128, budget: u128 },
    #[error("arithmetic overflow while evaluating {0}")]
    Overflow(&'static str),
    #[error("step {step} is not a dense step (dense_depth = {dense_depth})")]
    NotDenseStep { step: usize, dense_depth: usize },
    #[error("step {step} is out of range for sid_length {sid_length}")]
    StepOutOfRange { step: usize, sid_length: usize },
    #[error("state {node} is not a level-{level} state")]
    NodeLevel { node: u32, level: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite logit at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("requested {requested} constraints but only {available} distinct ids exist")]
    TooManyConstraints { requested: u128, available: u128 },
    #[error("exhaustive enumeration of {0} sequences exceeds the guard")]
    EnumerationGuard(u128),
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
}
