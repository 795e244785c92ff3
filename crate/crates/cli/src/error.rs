use netgain_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("certificate failure: {0}")]
    Certificate(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// Process exit code: 2 configuration, 3 numeric, 4 well-posedness or certificate.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Certificate(_) => 4,
            CliError::Core(e) => match e {
                CoreError::Singular(_) | CoreError::IllPosed(_) => 4,
                CoreError::NonFinite { .. }
                | CoreError::Domain(_)
                | CoreError::Divergence { .. }
                | CoreError::Estimation(_) => 3,
                CoreError::Shape { .. }
                | CoreError::Index { .. }
                | CoreError::Config(_)
                | CoreError::Parse { .. }
                | CoreError::Migration { .. }
                | CoreError::Io(_) => 2,
            },
        }
    }
}

pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}
