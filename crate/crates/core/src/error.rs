use std::path::PathBuf;

/// Crate-wide error type.
///
/// The CLI maps these onto process exit codes: usage errors -> 1,
/// data errors -> 2, training divergence -> 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or unusable input data (empty corpus, bad file format, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration or argument combination.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shape mismatch in a numeric primitive.
    #[error("shape error: {0}")]
    Shape(String),

    /// Loss became non-finite; the step was aborted.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    /// Iterative numeric routine failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
