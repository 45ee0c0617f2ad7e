use std::path::PathBuf;

use thiserror::Error;

/// Failure classes surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),

    #[error("open surface: edge ({0}, {1}) has a single incident triangle")]
    OpenSurface(usize, usize),

    #[error("non-manifold edge ({0}, {1}) shared by {2} triangles")]
    NonManifold(usize, usize, usize),

    #[error("inconsistent orientation that no triangle flip can repair")]
    Orientation,

    #[error("degenerate triangle {0} (area {1:e})")]
    DegenerateTriangle(usize, f64),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero operator block at level {0}: norm-based weight would be infinite")]
    ZeroBlock(usize),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
