use thiserror::Error;

/// Errors surfaced by every module of the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    }
}
