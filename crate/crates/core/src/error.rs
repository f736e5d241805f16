use std::fmt;

/// Errors raised by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("factorization residual {residual:e} exceeds tolerance {tol:e}")]
    Factorization { residual: f64, tol: f64 },
    #[error("zero denominator in reciprocal eigenvalue table at {0:?}")]
    SingularShift(Vec<usize>),
    #[error("solver instability at step {step} (t = {t}): {what}")]
    Instability { step: usize, t: f64, what: String },
    #[error("{0}")]
    NonConvergence(NonConvergence),
    #[error("{0}")]
    Analysis(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Details of an inner iteration that hit its cap.
#[derive(Debug, Clone)]
pub struct NonConvergence {
    pub step: usize,
    pub t: f64,
    pub equation: &'static str,
    pub iterations: usize,
    pub last_residual: f64,
}

impl fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-iteration did not converge at step {} (t = {}) after {} iterations, last residual {:e}",
            self.equation, self.step, self.t, self.iterations, self.last_residual
        )
    }
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Instability { .. } => 3,
            Error::NonConvergence(_) => 4,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
