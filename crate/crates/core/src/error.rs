use thiserror::Error;

/// Errors produced by the dynamics, observer and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("task inertia is singular (condition number {condition:.3e}); use a damped variant")]
    SingularTaskInertia { condition: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample period mismatch between filter paths ({left} s vs {right} s)")]
    StreamRateMismatch { left: f64, right: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid configuration: {field}: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("incompatible scenarios: {0}")]
    IncompatibleScenarios(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    ConfigSerialize(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
