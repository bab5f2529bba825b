use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value in trip {trip} at segment {segment}")]
    NonFiniteData { trip: String, segment: usize },

    #[error("extrapolation: grid point {at} m is outside observed span [{lo}, {hi}] m by more than one spacing")]
    Extrapolation { at: f64, lo: f64, hi: f64 },

    #[error("covariance matrix not positive definite after jitter escalation (last jitter {jitter:e})")]
    SingularModel { jitter: f64 },

    #[error("non-finite value in layer {layer}")]
    Numerical { layer: &'static str },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("plot: {0}")]
    Plot(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
