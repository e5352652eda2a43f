//! Error types shared across the crate.
//!
//! Two failure classes matter to callers: `Input` for bad user-supplied
//! data (CLI exit code 1) and `Contract` for violated internal invariants
//! (CLI exit code 2). I/O failures are treated as input errors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user input: bad arguments, malformed files, out-of-range values.
    #[error("input error: {0}")]
    Input(String),

    /// An internal invariant was violated (shape mismatch, non-finite value,
    /// fully-masked attention row, missing forward state).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code mandated for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io(_) => 1,
            Error::Contract(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand constructors; keeps call sites terse.
pub fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
