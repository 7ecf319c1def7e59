use alloc::string::String;

use crate::image::ColorSpace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("expected a {expected:?} image, got {found:?}")]
    WrongSpace { expected: ColorSpace, found: ColorSpace },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("texture level {level} outside [1, {n}]")]
    LevelOutOfRange { level: f64, n: usize },
    #[error("unknown parameter subtree `{0}`")]
    UnknownSubtree(String),
    #[error("mask selects no pixels")]
    EmptyRegion,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("spatial size {height}x{width} is not divisible by {factor}")]
    Indivisible { height: usize, width: usize, factor: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}

pub(crate) use {invalid, shape_err};
