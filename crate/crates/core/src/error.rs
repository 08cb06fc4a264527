use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("io: {0}")]
    Io(String),

    #[error("sweep failed: {skipped} of {total} trials skipped at {snr_db} dB")]
    SkipBudget {
        skipped: usize,
        total: usize,
        snr_db: f64,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
