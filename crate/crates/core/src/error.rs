use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperparameter: {0}")]
    Hyperparams(String),

    #[error("non-finite sufficient statistics (n={n}, sum={sum}, sumsq={sumsq})")]
    NonFiniteStats { n: usize, sum: f64, sumsq: f64 },

    #[error("cannot standardize: {0}")]
    Standardize(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid state: {}", .0.join("; "))]
    InvalidState(Vec<String>),

    #[error("invalid proposal: {0}")]
    Proposal(String),

    #[error("enumeration limit exceeded: {customers} customers (max {max})")]
    EnumerationLimit { customers: usize, max: usize },

    #[error("invalid chain configuration: {0}")]
    ChainConfig(String),

    #[error("synthetic generation failed: {0}")]
    Synth(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("partition length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{0}")]
    Eval(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("invalid input file {path}: {msg}")]
    Input { path: PathBuf, msg: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user data rather than a runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Standardize(_)
                | Error::Dataset(_)
                | Error::Input { .. }
                | Error::Geometry(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::NonFiniteStats { .. }
                | Error::LengthMismatch(..)
        )
    }
}
