use std::path::PathBuf;

use crate::report::CheckReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("system is not controllable: rank of controllability matrix is {rank}, state dimension is {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("steady state is underdetermined: I - A is singular (smallest singular value {sigma_min:e})")]
    SteadyStateUnderdetermined { sigma_min: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("certificate unavailable: step-size conditions fail\n{0}")]
    CertificateUnavailable(CheckReport),

    #[error("assumption violated in strict mode\n{0}")]
    AssumptionViolated(CheckReport),

    #[error("horizon mismatch: expected {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("run record is missing {0}; rerun with prediction recording enabled")]
    MissingRecord(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures of the numerical machinery itself, as opposed to
    /// rejected inputs or violated assumptions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure(_) | Error::NoConvergence { .. }
        )
    }

    /// True when the problem data violate a standing assumption
    /// (controllability, steady-state setpoints, step-size ranges).
    pub fn is_assumption(&self) -> bool {
        matches!(
            self,
            Error::NotControllable { .. }
                | Error::SteadyStateUnderdetermined { .. }
                | Error::CertificateUnavailable(_)
                | Error::AssumptionViolated(_)
        )
    }
}
