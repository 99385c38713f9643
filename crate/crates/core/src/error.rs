use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Reading, writing or parsing external data failed.
    Input,
    /// Arguments or data violate a documented precondition.
    Validation,
    /// An internal invariant did not hold.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed dtype `{0}` (expected fp32 | bf16 | int8[:g] | int4[:g])")]
    MalformedDType(String),
    #[error("invalid group size {0}: must be a positive integer")]
    InvalidGroup(i64),
    #[error("dimension {dim} is not divisible by group size {group}")]
    IndivisibleGroup { dim: usize, group: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dtype mismatch: {left} vs {right}")]
    DTypeMismatch { left: String, right: String },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("code {0} does not fit in a signed 4-bit nibble")]
    CodeOutOfRange(i32),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("input is empty")]
    EmptyInput,
    #[error("input is constant; correlation is undefined")]
    ConstantInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("need at least {needed} training vectors, got {got}")]
    TooFewTrainingVectors { needed: usize, got: usize },
    #[error("dimension {dim} is not divisible into {subspaces} sub-vectors")]
    IndivisibleDim { dim: usize, subspaces: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sample of {requested} requested from {available} vectors")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("only {found} of {requested} mutually near-orthogonal vectors found")]
    InsufficientCandidates { found: usize, requested: usize },
    #[error("split sizes {first} + {second} exceed {count} rows")]
    SizesExceedCount { first: usize, second: usize, count: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-finite value")]
    NonFiniteValue { line: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Parse { .. } | DimMismatch { .. } | NonFiniteValue { .. } | BadMagic
            | VersionUnsupported(_) | TruncatedFile { .. } | ChecksumMismatch { .. }
            | Corrupt(_) | Io(_) | Json(_) | Csv(_) => ErrorClass::Input,
            Invariant(_) => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }
}
