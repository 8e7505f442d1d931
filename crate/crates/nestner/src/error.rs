//! Error type shared across the crate.
//!
//! Exit-code contract for the CLI: 0 success, 2 configuration/validation
//! failures, 3 numeric failures (non-finite values during training).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes, naming both sides.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Non-finite values or other numeric trouble.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A caller broke an API contract (empty input, out-of-range index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input data, with file position.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    /// Adam refused a step because a gradient was not finite.
    #[error("training aborted: non-finite gradient in `{0}`")]
    NonFiniteGrad(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::NonFiniteGrad(_) => 3,
            _ => 2,
        }
    }
}
