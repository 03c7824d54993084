//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A loss evaluated to NaN or Inf; the run has diverged.
    #[error("non-finite loss in {context}: {value}")]
    NonFiniteLoss { context: String, value: f64 },

    /// A gradient contains NaN or Inf entries.
    #[error("non-finite gradient in {context}")]
    NonFiniteGradient { context: String },

    /// A parameter update produced NaN or Inf entries.
    #[error("non-finite parameters after {context}")]
    NonFiniteParams { context: String },

    /// Hessian-vector product requested along a zero direction.
    #[error("zero direction vector for Hessian-vector product")]
    ZeroDirection,

    /// Vector operation on mismatched lengths.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Batch or matrix dimensions do not match the model spec.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// Parameter vectors with different layouts cannot be combined.
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    /// FedAvg called with no client updates.
    #[error("empty update set for aggregation")]
    EmptyUpdateSet,

    /// A domain has no samples, so its class distribution is undefined.
    #[error("domain {0} has no samples")]
    EmptyDomain(String),

    /// A class-restricted operation found no samples of that class.
    #[error("class {class} absent from batch")]
    ClassAbsent { class: usize },

    /// Synthetic data spec would produce an unusable dataset.
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    /// Dataset file could not be parsed.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Dataset file header disagrees with the experiment configuration.
    #[error("schema error in {path}: {msg}")]
    Schema { path: String, msg: String },

    /// Bad or missing configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::DegenerateSpec(_)
        )
    }

    /// True for numerical failures (CLI exit code 3).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::NonFiniteGradient { .. }
                | Error::NonFiniteParams { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
