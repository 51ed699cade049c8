use thiserror::Error;

use crate::domains::{FunsorType, Name};

pub type Result<T> = std::result::Result<T, FunsorError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunsorError {
    #[error("type conflict on `{name}`: {left} vs {right}")]
    TypeConflict { name: Name, left: FunsorType, right: FunsorType },

    #[error("name `{0}` is not present")]
    NameAbsent(Name),

    #[error("type error: {0}")]
    TypeError(String),

    #[error("rewrite fuel exhausted after {0} rewrites")]
    FuelExhausted(usize),

    #[error("interpretation stack underflow")]
    StackUnderflow,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("index {index} out of range for bound {bound}")]
    IndexOutOfRange { index: i64, bound: usize },

    #[error("bounds error: {0}")]
    BoundsError(String),

    #[error("context mismatch: {0}")]
    ContextMismatch(String),

    #[error("reduction over real variable `{0}` is not supported here")]
    RealVarNotSupported(Name),

    #[error("rank deficient precision: {0}")]
    RankDeficient(String),

    #[error("missing assignment for `{0}`")]
    MissingAssignment(Name),

    #[error("expression is not affine: {0}")]
    NotAffine(String),

    #[error("invalid step matching ({condition}): {detail}")]
    InvalidMatching { condition: &'static str, detail: String },

    #[error("invalid name `{0}`")]
    InvalidName(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("intractable: {0}")]
    Intractable(String),
}

impl FunsorError {
    /// Stable machine-readable code, used by the CLI error objects.
    pub fn code(&self) -> &'static str {
        match self {
            FunsorError::TypeConflict { .. } => "TypeConflict",
            FunsorError::NameAbsent(_) => "NameAbsent",
            FunsorError::TypeError(_) => "TypeError",
            FunsorError::FuelExhausted(_) => "FuelExhausted",
            FunsorError::StackUnderflow => "StackUnderflow",
            FunsorError::DomainError(_) => "DomainError",
            FunsorError::IndexOutOfRange { .. } => "IndexOutOfRange",
            FunsorError::BoundsError(_) => "BoundsError",
            FunsorError::ContextMismatch(_) => "ContextMismatch",
            FunsorError::RealVarNotSupported(_) => "RealVarNotSupported",
            FunsorError::RankDeficient(_) => "RankDeficient",
            FunsorError::MissingAssignment(_) => "MissingAssignment",
            FunsorError::NotAffine(_) => "NotAffine",
            FunsorError::InvalidMatching { .. } => "InvalidMatching",
            FunsorError::InvalidName(_) => "InvalidName",
            FunsorError::InvalidModel(_) => "InvalidModel",
            FunsorError::InvalidConfig(_) => "InvalidConfig",
            FunsorError::Parse(_) => "ParseError",
            FunsorError::Intractable(_) => "Intractable",
        }
    }
}
