use std::fmt::Display;

/// Stage failures. Validation problems exit with 1, runtime problems with 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: {key}: {message}")]
    Validation { stage: &'static str, key: String, message: String },
    #[error("{stage}: {message}")]
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn invalid(stage: &'static str, key: &str, message: impl Display) -> Self {
        CliError::Validation { stage, key: key.to_string(), message: message.to_string() }
    }

    pub fn runtime(stage: &'static str, message: impl Display) -> Self {
        CliError::Runtime { stage, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Runtime { .. } => 2,
        }
    }
}
