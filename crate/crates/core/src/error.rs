use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error(
        "integration diverged{}: channel {channel} became non-finite",
        step.map(|k| format!(" at step {k}")).unwrap_or_default()
    )]
    IntegrationDiverged { step: Option<usize>, channel: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("optimizer error: non-finite gradient in parameter `{parameter}`")]
    Optimizer { parameter: String },

    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("control failed at step {step}: {message}")]
    Control { step: usize, message: String },

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Toml(_) | Error::ModelFormat(_) => ErrorKind::Config,
            Error::Shape { .. }
            | Error::IntegrationDiverged { .. }
            | Error::Optimizer { .. }
            | Error::RolloutDiverged { .. }
            | Error::Training { .. }
            | Error::Control { .. } => ErrorKind::Numerical,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => ErrorKind::Io,
        }
    }
}
