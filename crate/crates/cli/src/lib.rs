//! Command implementations behind the `roadsig` binary.
//!
//! Exit codes: 0 success, 1 runtime failure (a trial failed or aborted, a
//! check did not hold), 2 invalid configuration or usage, 3 unreadable or
//! unusable logs for analysis, 4 a port could not be bound.

pub mod commands;
pub mod config;
pub mod netlab_cmd;
pub mod flags;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("analysis input: {0}")]
    Analysis(String),
    #[error("{0}")]
    Bind(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Analysis(_) => 3,
            CliError::Bind(_) => 4,
        }
    }

    /// The message without the category prefix.
    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Analysis(m) | CliError::Bind(m) => m,
        }
    }
}

impl From<roadsig_core::Error> for CliError {
    fn from(e: roadsig_core::Error) -> Self {
        match e {
            roadsig_core::Error::Config(m) => CliError::Config(m),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<roadsig_netlab::NetError> for CliError {
    fn from(e: roadsig_netlab::NetError) -> Self {
        match e {
            e @ roadsig_netlab::NetError::Bind { .. } => CliError::Bind(e.to_string()),
            roadsig_netlab::NetError::Config(m) => CliError::Config(m),
            roadsig_netlab::NetError::Core(e) => e.into(),
            e => CliError::Runtime(e.to_string()),
        }
    }
}
