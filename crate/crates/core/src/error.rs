use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A primitive received operands whose shapes do not conform.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// `product(shape) != data.len()`.
    BadTensor { shape: Vec<usize>, len: usize },
    /// A forward value, loss, or gradient left the finite range.
    NonFinite { what: String },
    /// `backward` was called on something other than a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A token id outside the vocabulary.
    TokenOutOfRange { id: u32, vocab_size: usize },
    /// An input violated an operation precondition.
    InvalidInput(String),
    /// A configuration value is outside its allowed domain.
    InvalidConfig(String),
    /// An index (turn, parameter, ...) is out of range.
    OutOfRange { what: &'static str, index: usize, len: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for errors caused by numeric blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::BadTensor { shape, len } => {
                write!(f, "tensor of shape {shape:?} cannot hold {len} values")
            }
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::TokenOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} outside vocabulary of size {vocab_size}")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::OutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
        }
    }
}

impl core::error::Error for Error {}
