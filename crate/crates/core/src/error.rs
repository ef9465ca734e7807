use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid is not square ({height}x{width}); quarter-turn rotations need H == W")]
    NonSquareGrid { height: usize, width: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("flow set mismatch: {0}")]
    FlowSetMismatch(String),

    #[error("generator {0:?} is not a member of the flow set")]
    GeneratorNotInSet((i64, i64, i64)),

    #[error("group mismatch: {0}")]
    GroupMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
