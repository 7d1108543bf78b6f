use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("coordinate ({x}, {y}) outside the {height}x{width} grid")]
    OutOfGrid { x: usize, y: usize, height: usize, width: usize },
    #[error("non-finite {term} at step {step}")]
    NonFinite { term: &'static str, step: u64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape_err;
