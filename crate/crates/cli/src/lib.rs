//! Library side of the command-line pipeline: run configuration, command
//! implementations and SVG emission. The binary in `main.rs` is a thin
//! argument-parsing shell over [`commands`].

pub mod commands;
pub mod config;
pub mod svg;

/// Command failures, bucketed by exit code: usage 1, i/o 2, validation 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Validation(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl std::error::Error for CliError {}

impl From<siftfuse::data::DataError> for CliError {
    fn from(e: siftfuse::data::DataError) -> Self {
        match e {
            siftfuse::data::DataError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<siftfuse::model::ModelError> for CliError {
    fn from(e: siftfuse::model::ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<siftfuse::graph::GraphError> for CliError {
    fn from(e: siftfuse::graph::GraphError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<siftfuse::sift::SiftError> for CliError {
    fn from(e: siftfuse::sift::SiftError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<siftfuse::attack::AttackError> for CliError {
    fn from(e: siftfuse::attack::AttackError) -> Self {
        CliError::Validation(e.to_string())
    }
}
