use std::path::PathBuf;

use thiserror::Error;

use crate::model::ValidationIssue;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {origin}: {source}")]
    Json {
        origin: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported schema_version {found} in {origin} (expected {expected})")]
    SchemaVersion {
        origin: String,
        found: u32,
        expected: u32,
    },

    #[error("validation failed: {}", format_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("unknown knob `{0}`")]
    UnknownKnob(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("system adapter failed: {0}")]
    Adapter(String),

    #[error("advisor failed: {0}")]
    Advisor(String),

    #[error("unknown {kind} `{name}`{}", suggestion_suffix(.suggestion))]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        suggestion: Option<String>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(origin: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            origin: origin.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn suggestion_suffix(s: &Option<String>) -> String {
    match s {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}
