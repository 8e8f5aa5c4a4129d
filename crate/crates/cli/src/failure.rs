use hmm_pt::Error;
use serde::Serialize;

/// A terminal error: exit code plus a one-line JSON description.
#[derive(Debug, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: u8,
    pub error: &'static str,
    pub field: Option<String>,
    pub message: String,
}

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const RUNTIME: u8 = 4;

impl Failure {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Failure {
            code: CONFIG,
            error: "config",
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: DATA,
            error: "data",
            field: None,
            message: message.into(),
        }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.error))
    }

    /// Treats any error from `e` as a problem with the input data.
    pub fn as_data(e: Error) -> Self {
        match e {
            Error::Config { .. } => e.into(),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, error, field) = match &e {
            Error::Config { field, .. } => (CONFIG, "config", Some(field.clone())),
            Error::Model(_) => (CONFIG, "model", Some("model".into())),
            Error::Data(_) | Error::Load { .. } | Error::Schema { .. } => (DATA, "data", None),
            Error::Params(_) => (DATA, "params", None),
            Error::Domain(_) => (CONFIG, "domain", None),
            Error::TooManyPaths { .. } => (RUNTIME, "too_many_paths", None),
            Error::Initialization { .. } => (RUNTIME, "initialization", None),
            Error::Tuning { .. } => (RUNTIME, "tuning", None),
            Error::Checkpoint(_) => (RUNTIME, "checkpoint", None),
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => (RUNTIME, "io", None),
        };
        Failure {
            code,
            error,
            field,
            message,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}
