use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid point set: {0}")]
    InvalidPointSet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rigid step needs at least 3 active components, got {0}")]
    InsufficientComponents(usize),

    #[error("degenerate geometry: cross-covariance rank below 2 (singular values {0:?})")]
    DegenerateGeometry([f64; 3]),

    #[error("EM diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("all mixture components were rejected as outliers")]
    EmptyModel,

    #[error("view at angle {0} deg is empty after rejecting negative z")]
    EmptyView(f64),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::DegenerateGeometry(_)
                | Error::InsufficientComponents(_)
                | Error::Domain(_)
                | Error::EmptyModel
        )
    }
}
