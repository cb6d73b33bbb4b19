//! Configuration ingestion, built-in scenarios and command orchestration for
//! the `covbridge` binary.
//!
//! Exit-code contract: 0 success, 1 verification failure, 2 input or
//! controllability error, 3 numerical failure.

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;
pub mod scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("not controllable: {0}")]
    NotControllable(String),

    #[error("unknown scenario \"{0}\" (try `covbridge scenario list`)")]
    UnknownScenario(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed(_) => 1,
            CliError::Config(_) | CliError::NotControllable(_) | CliError::UnknownScenario(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}
