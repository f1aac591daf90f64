use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("leray projection applied to a field with {count} baroclinic modes")]
    NotBarotropic { count: usize },

    #[error("hydrostatic inconsistency: barotropic horizontal divergence {divergence:e} exceeds {tolerance:e}")]
    BarotropicDivergence { divergence: f64, tolerance: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("numerical blowup at step {step} (t = {time})")]
    Blowup { step: usize, time: f64 },

    #[error("{} ensemble member(s) blew up: {:?}", .members.len(), .members)]
    EnsembleBlowup { members: Vec<(usize, usize, f64)> },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
