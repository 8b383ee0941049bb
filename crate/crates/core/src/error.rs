use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFinite {
        term: &'static str,
        iteration: usize,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Errors caused by bad input or configuration (as opposed to I/O or
    /// numerical blow-ups).
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Domain(_)
                | Error::Shape(_)
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Capacity(_)
        )
    }
}

pub(crate) fn shape_err(
    what: &str,
    expected: impl std::fmt::Debug,
    got: impl std::fmt::Debug,
) -> Error {
    Error::Shape(format!("{what}: expected {expected:?}, got {got:?}"))
}
