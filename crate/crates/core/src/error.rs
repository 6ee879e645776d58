use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong in the core pipeline.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    EmptyId,
    EmptyResponse { id: String },
    DuplicateId { id: String },
    InvalidId { id: String },
    UnknownPlaceholder { name: String },
    MalformedTemplate { reason: &'static str },
    TokenizerMismatch { expected: String, found: String },
    TokenOutOfRange { token: u32, vocab_size: usize },
    SequenceTooLong { len: usize, cap: usize },
    NonFiniteEmbedding,
    PredictFromOutOfRange { predict_from: usize, rows: usize },
    ShapeMismatch { what: &'static str },
    MissingSample { id: String },
    LengthMismatch { id: String, expected: usize, found: usize },
    InvalidLogProb { id: String, value: f64 },
    PerturbationRequiresEmbedding,
    EmptyDataset,
    InvalidRatio { k: f64 },
    InvalidConfig { reason: String },
    InsufficientEligible { eligible: usize, required: usize },
    BudgetTooLarge { budget: usize, pool: usize },
    /// A backend failure while scoring one sample.
    Sample { id: String, source: Box<Error> },
}

impl Error {
    pub(crate) fn for_sample(self, id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample { id: id.into(), source: Box::new(e) },
        }
    }

    /// The innermost error, with any sample context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of the scoring model or log-prob cache, as opposed
    /// to malformed data or configuration.
    pub fn is_backend(&self) -> bool {
        matches!(
            self.root(),
            Error::TokenOutOfRange { .. }
                | Error::SequenceTooLong { .. }
                | Error::NonFiniteEmbedding
                | Error::PredictFromOutOfRange { .. }
                | Error::ShapeMismatch { .. }
                | Error::MissingSample { .. }
                | Error::LengthMismatch { .. }
                | Error::InvalidLogProb { .. }
                | Error::PerturbationRequiresEmbedding
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyId => f.write_str("sample id must be nonempty"),
            Error::EmptyResponse { id } => write!(f, "empty response in sample {id}"),
            Error::DuplicateId { id } => write!(f, "duplicate sample id {id}"),
            Error::InvalidId { id } => {
                write!(f, "sample id {id:?} contains a tab or newline")
            }
            Error::UnknownPlaceholder { name } => {
                write!(f, "template references undefined placeholder {{{name}}}")
            }
            Error::MalformedTemplate { reason } => write!(f, "malformed template: {reason}"),
            Error::TokenizerMismatch { expected, found } => write!(
                f,
                "tokenizer fingerprint mismatch: expected {expected}, found {found}"
            ),
            Error::TokenOutOfRange { token, vocab_size } => {
                write!(f, "token id {token} out of range for vocabulary of {vocab_size}")
            }
            Error::SequenceTooLong { len, cap } => {
                write!(f, "sequence of {len} tokens exceeds the context cap of {cap}")
            }
            Error::NonFiniteEmbedding => f.write_str("embedding contains non-finite values"),
            Error::PredictFromOutOfRange { predict_from, rows } => {
                write!(f, "predict_from {predict_from} out of range for {rows} rows")
            }
            Error::ShapeMismatch { what } => write!(f, "shape mismatch: {what}"),
            Error::MissingSample { id } => write!(f, "sample {id} not found in log-prob cache"),
            Error::LengthMismatch { id, expected, found } => write!(
                f,
                "length mismatch for sample {id}: expected {expected} log-probs, found {found}"
            ),
            Error::InvalidLogProb { id, value } => {
                write!(f, "invalid log-prob {value} for sample {id}")
            }
            Error::PerturbationRequiresEmbedding => {
                f.write_str("perturbation requires embedding access")
            }
            Error::EmptyDataset => f.write_str("dataset has no response tokens"),
            Error::InvalidRatio { k } => write!(f, "token ratio k={k} must lie in (0, 100]"),
            Error::InvalidConfig { reason } => write!(f, "invalid configuration: {reason}"),
            Error::InsufficientEligible { eligible, required } => write!(
                f,
                "only {eligible} eligible samples, selection needs {required}"
            ),
            Error::BudgetTooLarge { budget, pool } => {
                write!(f, "budget {budget} exceeds pool of {pool} samples")
            }
            Error::Sample { id, source } => write!(f, "sample {id}: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Sample { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
