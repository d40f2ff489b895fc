use std::fmt;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(args: fmt::Arguments<'_>) -> Self {
        Error::Shape(args.to_string())
    }

    pub(crate) fn invalid(args: fmt::Arguments<'_>) -> Self {
        Error::Invalid(args.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::shape(format_args!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::invalid(format_args!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;
