use std::path::PathBuf;

use crate::trainer::TrainTrace;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants fall into two families: input validation (bad shapes, bad
/// parameters, unparsable files) and numerical failure (non-convergence,
/// loss of definiteness, divergence). [`Error::is_numerical`] tells them
/// apart so front ends can map them to different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (|a[{i}][{j}] - a[{j}][{i}]| = {gap})")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("eigen-decomposition did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("triangular matrix is singular at diagonal index {0}")]
    SingularTriangular(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("{path}: parse error at row {row}, column {col}: {msg}")]
    Parse { path: PathBuf, row: usize, col: usize, msg: String },
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRows { path: PathBuf, row: usize, expected: usize, found: usize },
    #[error("column {0} is constant and cannot be standardized")]
    ConstantColumn(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("empty data")]
    EmptyData,

    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("laplace scale is zero but the two inputs differ")]
    ScaleZero,

    #[error("noiseless encoder has a singular Gram matrix")]
    SingularNoiselessEncoder,
    #[error("all task eigenvalues are zero")]
    AllEigenvaluesZero,
    #[error("latent dimension {z} is outside 1..={n}")]
    BadLatentDim { z: usize, n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape does not match network: {0}")]
    TapeMismatch(String),
    #[error("cross-entropy target {0} lies outside [0, 1]")]
    BadTarget(f64),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64, trace: Box<TrainTrace> },

    #[error("codec format: {0}")]
    Format(String),
}

impl Error {
    /// True for failures caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NoConvergence { .. }
                | Error::SingularTriangular(_)
                | Error::NonFiniteValue(_)
                | Error::SingularNoiselessEncoder
                | Error::AllEigenvaluesZero
                | Error::Diverged { .. }
        )
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
