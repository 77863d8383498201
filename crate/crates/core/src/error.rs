//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by this crate.
///
/// The variants are coarse by design: callers mostly need to distinguish
/// bad input (`Parse`, `Validation`, `Bounds`, `NotFound`), broken caller
/// contracts (`Contract`), and genuine numerical breakdowns (`Numerical`).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input text; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An index or dimension was out of range.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// Input data failed a semantic check (counts, headers, magic bytes).
    #[error("validation error: {0}")]
    Validation(String),

    /// A lookup key (word, label) does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// An iterative routine produced a non-finite value or lost
    /// monotonicity; `iteration` is the step at which it was detected.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn bounds(msg: impl Into<String>) -> Self {
        Error::Bounds(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, message: msg.into() }
    }

    pub(crate) fn numerical(iteration: usize, msg: impl Into<String>) -> Self {
        Error::Numerical { iteration, message: msg.into() }
    }
}
