use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(spdelab_core::Error),
}

impl From<spdelab_core::Error> for CliError {
    fn from(e: spdelab_core::Error) -> Self {
        match e {
            spdelab_core::Error::Config { field, reason } => CliError::Config { field, reason },
            other => CliError::Core(other),
        }
    }
}

/// Machine-readable error line written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub error_class: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<&'a str>,
    pub message: String,
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> &'static str {
        use spdelab_core::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core(E::BlowUp { .. }) => "blow_up",
            CliError::Core(E::Degenerate(_)) => "degenerate",
            CliError::Core(E::NoConvergence { .. }) => "no_convergence",
            CliError::Core(_) => "internal",
        }
    }

    /// 2 configuration, 3 blow-up, 4 degenerate study, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "blow_up" => 3,
            "degenerate" => 4,
            _ => 1,
        }
    }

    pub fn report(&self) -> ErrorReport<'_> {
        ErrorReport {
            error_class: self.class(),
            exit_code: self.exit_code(),
            field: match self {
                CliError::Config { field, .. } => Some(field),
                _ => None,
            },
            message: self.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::config("preset", "x").exit_code(), 2);
        assert_eq!(CliError::from(spdelab_core::Error::config("nx", "x")).exit_code(), 2);
        assert_eq!(CliError::from(spdelab_core::Error::BlowUp { step: 3 }).exit_code(), 3);
        assert_eq!(CliError::from(spdelab_core::Error::Degenerate("d".into())).exit_code(), 4);
        let nc = spdelab_core::Error::NoConvergence { iterations: 1, residual: 1.0 };
        assert_eq!(CliError::from(nc).exit_code(), 1);
    }

    #[test]
    fn report_names_field() {
        let e = CliError::config("preset", "unknown preset");
        let json = serde_json::to_string(&e.report()).unwrap();
        assert!(json.contains("\"field\":\"preset\""), "{json}");
        assert!(json.contains("\"error_class\":\"config\""));
    }
}
