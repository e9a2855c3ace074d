use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

/// Failures split by who has to act: `Validation` means the operator's
/// config or workspace is wrong, `Compute` means a stage failed while running.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Compute(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn compute(msg: impl Into<String>) -> Self {
        CliError::Compute(msg.into())
    }
}

impl From<diffmia::Error> for CliError {
    fn from(e: diffmia::Error) -> Self {
        use diffmia::Error as E;
        match e {
            E::Config(_) | E::Parse { .. } | E::UnknownAlpha(_) | E::TooSmall(_) => CliError::Validation(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}
