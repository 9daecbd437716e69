//! Error taxonomy shared across the whole toolkit.
//!
//! Every fallible operation returns [`Result`]. The variants map onto the
//! process exit codes used by the CLI: input/format problems exit 2,
//! configuration problems exit 3, numerical failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// A network or run configuration is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A file does not match its declared container format.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset contents are unusable (missing class, empty split, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training aborted (non-finite gradient, failed step, ...).
    #[error("training error: {0}")]
    Training(String),

    /// A metric is undefined for the given confusion matrix.
    #[error("metric error: {0}")]
    Metric(String),

    /// A value left the finite range (NaN/Inf) or a numerical check failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category: 2 input/format, 3 config,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::Shape(_) | Error::Contract(_) | Error::Config(_) => 3,
            Error::Training(_) | Error::Metric(_) | Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
