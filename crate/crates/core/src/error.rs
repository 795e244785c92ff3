use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: String },

    #[error("index {index} out of range for {len} sub-operators")]
    Index { index: usize, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("certificate is singular for sub-operator {0}: alpha * gamma^2 equals gamma_M^2")]
    Singular(usize),

    #[error("interconnection is not well posed: feedthrough cycle through sub-operators {0:?}")]
    IllPosed(Vec<usize>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} with learning rate {learning_rate}")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("gain estimation failed: {0}")]
    Estimation(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported schema version {found} (this build reads version {expected})")]
    Migration { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn non_finite(what: impl Into<String>, index: impl ToString) -> Self {
        Error::NonFinite {
            what: what.into(),
            index: index.to_string(),
        }
    }
}

/// Rejects vectors containing NaN or infinities.
pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::non_finite(what, i)),
        None => Ok(()),
    }
}
