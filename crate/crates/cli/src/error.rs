use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    /// A declared condition or certification does not hold.
    #[error("violation: {0}")]
    Violation(String),
    #[error("failure: {0}")]
    Failure(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Violation(_) | CliError::Failure(_) | CliError::Io(_) => 2,
        }
    }
}

pub fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}
