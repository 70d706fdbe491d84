use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config file, override or option value.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] tractseg::Error),
    /// A check ran to completion and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Failed(_) => 1,
        }
    }
}
