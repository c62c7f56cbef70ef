use std::path::PathBuf;

use thiserror::Error;

use crate::kernels::KernelFamily;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("kernel family mismatch: expected {expected:?}, got {actual:?}")]
    FamilyMismatch {
        expected: KernelFamily,
        actual: KernelFamily,
    },

    #[error("approximation order must be one of 2, 4, 6 (got {0})")]
    OrderParity(usize),

    #[error("spectral factorization degenerate: root with real part {0:e} is marginally stable")]
    FactorizationDegenerate(f64),

    #[error("drift matrix is not Hurwitz (max real eigenvalue {0:e})")]
    Stability(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("innovation covariance for target {target} is singular")]
    GatingDegenerate { target: usize },

    #[error("association event count exceeds cap {cap}")]
    CombinatorialBlowup { cap: usize },

    #[error("event likelihood undefined: selected innovation block is singular")]
    DegenerateLikelihood,

    #[error("no association event has positive weight")]
    NoFeasibleEvent,

    #[error("coupled update produced an indefinite covariance (min eigenvalue {0:e})")]
    UpdateInconsistency(f64),

    #[error("smoother: predicted covariance at step {0} is singular")]
    SmootherDegenerate(usize),

    #[error("temporal update: innovation covariance is singular")]
    UpdateDegenerate,

    #[error("covariance is not positive definite after jitter escalation")]
    Conditioning,

    #[error("singular covariance")]
    SingularCovariance,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schedule(_) | Error::Io { .. } | Error::Format { .. } => 2,
            Error::CombinatorialBlowup { .. } => 4,
            Error::AtFrame { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
