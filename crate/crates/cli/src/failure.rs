use std::path::Path;

use hybridcnn::Error;
use serde::Serialize;

/// A failed run: reported on stderr as one JSON line, with the exit code
/// of its class.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip)]
    pub code: i32,
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { kind: "usage", message: message.into(), code: EXIT_USAGE }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure { kind: "config", message: message.into(), code: EXIT_USAGE }
    }

    pub fn path(path: &Path, e: std::io::Error) -> Self {
        Failure { kind: "path", message: format!("{}: {e}", path.display()), code: EXIT_USAGE }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Failure { kind: "gradcheck", message: message.into(), code: EXIT_VERIFICATION }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Config(_) => ("config", EXIT_USAGE),
            Error::InvalidArgument(_) => ("usage", EXIT_USAGE),
            Error::Io { .. } => ("path", EXIT_USAGE),
            Error::Json(_) => ("config", EXIT_USAGE),
            Error::NonFiniteLoss { .. } | Error::NonFinite { .. } | Error::DivisionByZero { .. } => ("non_finite", EXIT_RUNTIME),
            Error::BadMagic(_) | Error::Version { .. } | Error::Truncated(_) | Error::Checkpoint(_) => ("checkpoint", EXIT_RUNTIME),
            Error::Data(_) | Error::Image(_) => ("data", EXIT_RUNTIME),
            _ => ("runtime", EXIT_RUNTIME),
        };
        Failure { kind, message: e.to_string().replace('\n', " "), code }
    }
}
