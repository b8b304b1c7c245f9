use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    /// A vector field of the wrong kind was passed.
    #[error("kind error in {op}: expected {expected} field, got {got}")]
    Kind {
        op: &'static str,
        expected: &'static str,
        got: &'static str,
    },
    /// A precondition of the call was violated.
    #[error("contract error: {0}")]
    Contract(String),
    /// Model or training configuration is invalid.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(Error::Dimension { op, detail })
}
