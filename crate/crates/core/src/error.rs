//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or operand shapes do not line up.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: String, detail: String },

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A documented precondition was violated by the caller.
    #[error("precondition violated in {op}: {detail}")]
    Precondition { op: String, detail: String },

    /// An internal invariant failed; indicates a bug rather than bad input.
    #[error("internal contract violated in {op}: {detail}")]
    Contract { op: String, detail: String },

    /// A non-finite value (NaN or infinity) was produced.
    #[error("non-finite value in {op}: {detail}")]
    Numeric { op: String, detail: String },

    /// Token or index not representable by the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// A sentence contained no tokens after normalization.
    #[error("sentence is empty after tokenization")]
    EmptySentence,

    /// A text artifact could not be parsed.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Synthetic corpus generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// Training-pair sampling is impossible for the given corpus.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// A time interval is malformed (end before start, negative, ...).
    #[error("invalid interval: {0}")]
    Interval(String),

    /// A moment index is outside the valid upper triangle.
    #[error("invalid moment: {0}")]
    Moment(String),

    /// A metric was queried with unusable arguments.
    #[error("metric error: {0}")]
    Metric(String),

    /// An artifact does not follow its on-disk protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Artifacts produced under different configurations were mixed.
    #[error("compatibility error: {0}")]
    Compatibility(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::Dimension`].
    pub fn dim(op: &str, detail: impl Into<String>) -> Self {
        Error::Dimension { op: op.to_string(), detail: detail.into() }
    }

    /// Shorthand for [`Error::Precondition`].
    pub fn pre(op: &str, detail: impl Into<String>) -> Self {
        Error::Precondition { op: op.to_string(), detail: detail.into() }
    }

    /// Shorthand for [`Error::Contract`].
    pub fn contract(op: &str, detail: impl Into<String>) -> Self {
        Error::Contract { op: op.to_string(), detail: detail.into() }
    }

    /// Shorthand for [`Error::Numeric`].
    pub fn numeric(op: &str, detail: impl Into<String>) -> Self {
        Error::Numeric { op: op.to_string(), detail: detail.into() }
    }
}
