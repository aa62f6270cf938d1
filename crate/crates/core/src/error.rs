use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("{what} must lie in {range}, got {value}")]
    OutOfRange {
        what: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("id {id} out of range for size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,
    #[error("variable belongs to tape {found}, not the active tape {expected}")]
    DetachedTape { expected: u64, found: u64 },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("enumeration needs {needed} latent sequences, over the bound of {bound}")]
    BudgetExceeded { needed: u128, bound: u128 },
    #[error("distribution is not normalized: total mass {0}")]
    Unnormalized(f64),
    #[error("observed and latent index sets are inconsistent: {0}")]
    Misaligned(String),
    #[error("non-finite value in {term}")]
    NonFinite { term: &'static str },
    #[error("token {0} is not covered by the cipher key")]
    UncoveredToken(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
