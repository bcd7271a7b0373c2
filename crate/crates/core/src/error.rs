use thiserror::Error;

use crate::io::container::FormatError;
use crate::io::config::ConfigError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid {width}x{height} with pitch {pitch}")]
    InvalidGrid { width: usize, height: usize, pitch: f64 },

    #[error("invalid Gauss-Laguerre index pair (n={n}, m={m}): {reason}")]
    InvalidMode { n: i32, m: i32, reason: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("{what} {value} outside [{min}, {max}]")]
    OutOfRange { what: &'static str, value: f64, min: f64, max: f64 },

    #[error("sensor grid incompatible with pupil sampling: {0}")]
    SensorGrid(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
