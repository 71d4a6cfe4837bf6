//! Failures reported as JSON on stderr, with their exit codes.

use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Failure {
    /// The spec is malformed or the library rejected its parameters.
    #[error("{0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidSpec(msg.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidSpec(_) => "invalid-spec",
            Self::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

impl From<qres::Error> for Failure {
    fn from(e: qres::Error) -> Self {
        Self::InvalidSpec(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
