use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter value lies outside the parametric domain.
    #[error("parameter {value} outside [0, 1]")]
    Domain { value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration problem; `path` names the offending key.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("nonconforming patch edges: {0}")]
    Conformity(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("factorization failed at pivot {index}: value {pivot:e}")]
    Factorization { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerically singular system (pivot {pivot:e} at column {index})")]
    Singular { index: usize, pivot: f64 },

    #[error("unstable coupled system: {0}")]
    Stability(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for this error: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
