use std::fmt;

use thiserror::Error;

use crate::operator::SpatialField;
use crate::stepper::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the solver, the diagnostics and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A stiffness solve failed. The assembled form is positive definite by
    /// construction, so this always points at an assembly bug.
    #[error("singular operator: {0}")]
    SingularOperator(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Newton failed on one implicit step. Carries the last iterate so the
    /// caller can retry with a smaller step.
    #[error("implicit step failed: {0}")]
    StepFailure(Box<StepFailure>),

    /// A step failed in the middle of an evolution; the records computed so
    /// far are attached.
    #[error("evolution stopped at t = {t}: {source}")]
    EvolutionFailed {
        t: f64,
        partial: Box<Trajectory>,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("Rayleigh quotient is undefined for the zero field")]
    UndefinedQuotient,

    #[error("{0} is undefined for q = 2")]
    LinearCase(&'static str),

    #[error("trajectory did not reach the extinction threshold")]
    NotExtinct,

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct StepFailure {
    pub last_iterate: SpatialField,
    pub residual: f64,
    pub iterations: usize,
    pub reason: String,
}

impl fmt::Display for StepFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} Newton iterations (residual {:e})",
            self.reason, self.iterations, self.residual
        )
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
