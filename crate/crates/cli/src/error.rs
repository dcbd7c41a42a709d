use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration. Nothing was run.
    #[error("{0}")]
    Config(String),
    /// The run itself failed, or its output could not be written.
    #[error("{0}")]
    Runtime(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> CliError {
        CliError::Config(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> CliError {
        CliError::Runtime(message.into())
    }

    /// A core parameter check that failed while resolving the configuration.
    pub fn from_domain(e: grw_core::Error) -> CliError {
        CliError::Config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// One-line JSON for the error stream.
    pub fn to_json(&self) -> String {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        };
        let report = ErrorReport {
            error: ErrorBody {
                kind,
                message: self.to_string(),
            },
        };
        serde_json::to_string(&report).expect("plain strings serialize")
    }
}

impl From<grw_core::Error> for CliError {
    fn from(e: grw_core::Error) -> CliError {
        CliError::Runtime(e.to_string())
    }
}
