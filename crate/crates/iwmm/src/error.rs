use thiserror::Error;

/// Errors produced by the iwmm crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input dimensions do not line up (e.g. latent points of different length).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A covariance or scale matrix could not be factorized even after the
    /// jitter escalation; carries the jitter magnitudes that were attempted.
    #[error("matrix not positive definite after jitter levels {tried:?}")]
    NotPositiveDefinite { tried: Vec<f64> },

    /// Generic numerical failure (non-finite values, failed search, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid configuration; lists every violated field.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// Dataset ingestion or archive I/O problem.
    #[error("data error: {0}")]
    Data(String),

    /// Bad command-line usage (unknown dataset name, empty method list, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 usage/validation, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Io { .. } => 3,
            Error::NotPositiveDefinite { .. } | Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
