use thiserror::Error;

/// Library-wide error type. Numerical routines never panic on bad input or
/// non-convergence; they return one of these.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of the operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// An iterative scheme ran out of budget before reaching tolerance.
    #[error("{op} did not converge: achieved {achieved:.3e}, wanted {wanted:.3e}")]
    AccuracyNotReached {
        op: &'static str,
        achieved: f64,
        wanted: f64,
    },

    /// Series/product truncation bounds could not be met with the configured caps.
    #[error("truncation insufficient in {op}: {msg}")]
    TruncationInsufficient { op: &'static str, msg: String },

    /// Invalid configuration (parameter files, CLI keys, scenario fields).
    #[error("config error: {0}")]
    Config(String),

    /// File I/O and serialization failures.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
