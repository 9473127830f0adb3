//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the estimation, design, and benchmark layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Bayes update zeroed every particle weight. The offending outcome
    /// and control are carried so the caller can decide how to recover.
    #[error("posterior collapse: total weight is zero after outcome {outcome} at t = {time}")]
    PosteriorCollapse { outcome: u8, time: f64 },

    /// The prior kept producing draws outside the model's parameter bounds.
    #[error("prior rejected: {0} consecutive draws violated model constraints")]
    PriorRejection(usize),

    /// A particle-cloud covariance stayed indefinite after regularization.
    #[error("degenerate covariance: eigenvalue {0:e} after regularization")]
    DegenerateCovariance(f64),

    /// A matrix that must be invertible was singular.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// An outcome probability was at the boundary while its gradient was not
    /// vanishing, so the Fisher information term diverges.
    #[error("singular Fisher contribution: p = {p:e} with non-vanishing gradient at t = {time}")]
    SingularFisher { p: f64, time: f64 },

    /// A computed quantity was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The requested operation is not defined for this model.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A benchmark configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
