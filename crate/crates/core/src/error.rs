use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("timestep {t} out of range 0..={max}")]
    TimeOutOfRange { t: usize, max: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("numerical instability in {model} at t={t}: {detail}")]
    Instability {
        model: String,
        t: usize,
        detail: String,
    },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 2 configuration, 3 numerical, 4 input/output.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Dimension { .. } | Error::TimeOutOfRange { .. } | Error::NotPsd { .. } | Error::Config(_) => 2,
            Error::Singular(_) | Error::Instability { .. } => 3,
            Error::Io { .. } | Error::Image { .. } => 4,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
