use std::path::PathBuf;

use snellforge_core::Error as CoreError;

/// Failures surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cap exceeded: {what}")]
    CapExceeded { what: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} invariant(s) failed")]
    InvariantsFailed { failed: usize },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1: an invariant failed. 2: the input was rejected. 3: a solver did not converge.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvariantsFailed { .. }
            | CliError::Core(CoreError::InvariantViolation { .. }) => 1,
            CliError::Core(CoreError::NoConvergence { .. } | CoreError::MokobodzkiFailed) => 3,
            _ => 2,
        }
    }

    /// Short machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Invalid(_) => "validation",
            CliError::CapExceeded { .. } => "cap_exceeded",
            CliError::Io { .. } => "io",
            CliError::InvariantsFailed { .. } => "invariant",
            CliError::Core(e) => match e {
                CoreError::NoConvergence { .. } => "no_convergence",
                CoreError::MokobodzkiFailed => "mokobodzki_failed",
                CoreError::InvariantViolation { .. } => "invariant",
                CoreError::EnumerationCapExceeded { .. } => "cap_exceeded",
                _ => "validation",
            },
        }
    }
}
