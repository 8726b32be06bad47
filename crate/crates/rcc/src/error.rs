//! Error type shared across the crate.
//!
//! Variants are grouped by how a caller should react: `InvalidInput` and
//! `Config` mean the request itself was malformed, `Io`/`Backend`/`Parse`
//! mean the outside world misbehaved, and `Invariant` means a computation
//! produced something it promised never to produce (e.g. a non-finite
//! loss). The CLI maps each group onto a distinct process exit code.

use thiserror::Error;

/// Process exit code associated with each error group.
///
/// `0` is reserved for success and is never produced by [`Error`].
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_INVARIANT: i32 = 5;

#[derive(Debug, Error)]
pub enum Error {
    /// A function precondition was violated (empty slice, non-finite value,
    /// mismatched lengths, out-of-range parameter, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration file, flag combination, or template was unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem failure, annotated with the path that caused it.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// The completion backend failed after exhausting retries, or answered
    /// with a permanent (non-retriable) HTTP error.
    #[error("backend error: {0}")]
    Backend(String),

    /// The backend answered, but the reply could not be interpreted.
    #[error("parse error: {0}")]
    Parse(String),

    /// Correlation is undefined for the given inputs (zero rank variance).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// An internal invariant failed; this always indicates a bug or a
    /// numerically diverged run and aborts the operation.
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl Error {
    /// Attach a path to a raw `std::io::Error`.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Exit code the CLI should terminate with for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::UndefinedCorrelation(_) => {
                EXIT_CONFIG
            }
            Error::Io { .. } => EXIT_IO,
            Error::Backend(_) | Error::Parse(_) => EXIT_BACKEND,
            Error::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_per_group() {
        let config = Error::Config("x".into());
        let io = Error::io("f", std::io::Error::new(std::io::ErrorKind::Other, "x"));
        let backend = Error::Backend("x".into());
        let invariant = Error::Invariant("x".into());
        assert_eq!(config.exit_code(), EXIT_CONFIG);
        assert_eq!(io.exit_code(), EXIT_IO);
        assert_eq!(backend.exit_code(), EXIT_BACKEND);
        assert_eq!(invariant.exit_code(), EXIT_INVARIANT);
    }

    #[test]
    fn parse_failures_count_as_backend_trouble() {
        assert_eq!(Error::Parse("garbled".into()).exit_code(), EXIT_BACKEND);
    }
}
