use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum StmaError {
    /// Operand shapes do not agree.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    /// A precondition of an operation was violated.
    #[error("{0}")]
    Contract(String),

    /// A variable was queried on a tape that did not record it.
    #[error("variable {index} is not recorded on this tape")]
    UnknownLeaf { index: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = StmaError> = std::result::Result<T, E>;

impl StmaError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        StmaError::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        StmaError::Contract(msg.into())
    }
}
