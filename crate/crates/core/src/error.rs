use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("interval error: end time {t1} must exceed start time {t0}")]
    Interval { t0: f64, t1: f64 },

    #[error("solver diverged: non-finite state at step {step}")]
    Divergence { step: usize },

    #[error("query time {t} outside the solved interval [{t0}, {t1}]")]
    Range { t: f64, t0: f64, t1: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate channels (zero variance): {0:?}")]
    DegenerateChannel(Vec<usize>),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate geometry: all feature rows coincide around center node {0}")]
    DegenerateGeometry(usize),

    #[error("isolated nodes with zero degree: {0:?}")]
    IsolatedNodes(Vec<usize>),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("cohort error: {0}")]
    Cohort(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("AUC undefined: {0}")]
    AucUndefined(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("training diverged: {0}")]
    NonFiniteLoss(String),
}

impl Error {
    /// Process exit status: 2 config, 3 I/O or malformed data, 4 numerical
    /// divergence, 5 artifact mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::Divergence { .. } | Error::NonFiniteLoss(_) => 4,
            Error::Mismatch(_) | Error::Checkpoint(_) => 5,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
