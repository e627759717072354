use thiserror::Error;

/// Crate-wide error type. Variant names follow the contract each
/// operation documents.
#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("target index {index} out of range for {classes} classes")]
    BadTarget { index: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("shape mismatch: {context} ({lhs:?} vs {rhs:?})")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("token id {id} out of range for vocab size {vocab}")]
    BadTokenId { id: usize, vocab: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("sequence length {len} exceeds maximum {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("fertility sum is zero, decoder input would be empty")]
    EmptyDecoderInput,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fertility target {target} exceeds maximum {max}")]
    FertilityOverflow { target: usize, max: usize },
    #[error("target length {target_len} infeasible for source length {source_len} with max fertility {f_max}")]
    InfeasibleLength {
        source_len: usize,
        target_len: usize,
        f_max: usize,
    },
    #[error("vocabulary mismatch: model has {model}, LM has {lm}")]
    VocabMismatch { model: usize, lm: usize },
    #[error("non-finite loss term {0}")]
    NonFiniteLoss(&'static str),
    #[error("regime {regime} incompatible with dataset: {reason}")]
    RegimeDataMismatch { regime: String, reason: String },
    #[error("malformed labeling-function rule `{rule}`: {reason}")]
    BadRule { rule: String, reason: String },
    #[error("empty evaluation set")]
    EmptyEval,
    #[error("label balance infeasible: {0}")]
    BalanceInfeasible(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),
    #[error("translation endpoint failure: {0}")]
    EndpointFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
