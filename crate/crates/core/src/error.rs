use std::io;

use thiserror::Error;

/// Errors produced while building corpora, sampling, training or evaluating.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("insufficient tokens for batch geometry: {tokens} tokens, need at least {needed}")]
    InsufficientTokens { tokens: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("proposal exponent {0} outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("degenerate unigram: no word has a positive count")]
    DegenerateUnigram,

    #[error("cannot exclude target from singleton support")]
    SingletonSupport,

    #[error("target {0} lies outside the proposal support")]
    TargetOutsideSupport(usize),

    #[error("word id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },

    #[error("numerical overflow in hidden step")]
    HiddenOverflow,

    #[error("non-finite gradient at lane {lane}, position {position}")]
    NonFiniteGradient { lane: usize, position: usize },

    #[error("non-finite update in {matrix} at row {row}, column {col}")]
    NonFiniteUpdate {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("inconsistent update probability for word {0}")]
    InconsistentUpdateProbability(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("vocabulary size mismatch: checkpoint has {found}, expected {expected}")]
    VocabSizeMismatch { expected: usize, found: usize },

    #[error("hidden size mismatch: checkpoint has {found}, expected {expected}")]
    HiddenSizeMismatch { expected: usize, found: usize },

    #[error("corrupt checkpoint header")]
    CorruptHeader,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated checkpoint payload")]
    TruncatedPayload,

    #[error("malformed vocabulary file at line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },

    #[error("training diverged at epoch {epoch}: validation perplexity {perplexity}")]
    Diverged { epoch: usize, perplexity: f64 },

    #[error("{0} is not supported")]
    Unsupported(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
