use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A factorization did not succeed even at the largest jitter in the ladder.
    #[error("numerical failure in {context} (jitter ladder tried: {jitter_ladder:?})")]
    Numerical {
        context: String,
        jitter_ladder: Vec<f64>,
    },

    #[error("acquisition produced no candidates after {attempts} path draws")]
    AcquisitionFailed { attempts: usize },

    #[error("not available: {0}")]
    NotAvailable(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}
