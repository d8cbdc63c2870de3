use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rotation: max |U^T U - I| = {deviation:e} exceeds 1e-12")]
    InvalidRotation { deviation: f64 },

    #[error("invalid spike spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("subcritical spike {value}: spikes must exceed 1")]
    SubcriticalSpike { value: f64 },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("S2 is numerically singular (condition estimate {condition:e})")]
    SingularS2 { condition: f64 },

    #[error("pole at {at}: {reason}")]
    Pole { at: f64, reason: &'static str },

    #[error("z = {z} lies inside the support [{a}, {b}]")]
    InsideSupport { z: f64, a: f64, b: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no supercritical root for lambda = {lambda} at c = {c}, y = {y}")]
    NoSupercriticalRoot { lambda: f64, c: f64, y: f64 },

    #[error("non-positive CLT variance {value} (nu = {nu})")]
    NonpositiveVariance { value: f64, nu: f64 },

    #[error("index {index} out of range for block of size {size}")]
    Index { index: usize, size: usize },

    #[error("entry covariance is not PSD (smallest eigenvalue {min_eig:e})")]
    InvalidCovariance { min_eig: f64 },

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("experiment degenerate: {failed} of {total} replications failed (first: {first})")]
    ExperimentDegenerate {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
