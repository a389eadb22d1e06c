use alloc::string::String;

use crate::feature::ClassId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("duplicate class {0}")]
    DuplicateClass(ClassId),
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("class {class} has {available} examples, needs more than {required}")]
    NotEnoughExamples { class: ClassId, available: usize, required: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}
