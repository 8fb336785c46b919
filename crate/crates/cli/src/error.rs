use hiero::HieroError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(#[source] HieroError),
    #[error(transparent)]
    Core(#[from] HieroError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Core(e) => core_kind(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "validation" => 5,
            _ => 6,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() } })
    }
}

fn core_kind(e: &HieroError) -> &'static str {
    match e {
        HieroError::InvalidArgument(_) => "config",
        HieroError::Io { .. } => "io",
        HieroError::Json { .. }
        | HieroError::Schema { .. }
        | HieroError::BadMagic { .. }
        | HieroError::Truncated { .. }
        | HieroError::SizeMismatch { .. }
        | HieroError::NonIncreasingTimestamps { .. } => "validation",
        _ => "compute",
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
