use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all modules of the crate.
#[derive(Debug)]
pub enum Error {
    /// Invalid physical input (non-positive mass, negative time, ...).
    Domain(String),
    /// Numerical integration failed to reach the requested tolerance.
    /// Carries the best available estimate and its error estimate.
    Integration {
        message: String,
        partial: f64,
        error_estimate: f64,
    },
    /// Iterative fit did not converge; carries residual diagnostics.
    Convergence(String),
    /// Input data does not satisfy an operation's preconditions.
    InvalidInput(String),
    /// Trace/spectrum file I/O or format problem.
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Integration {
                message,
                partial,
                error_estimate,
            } => write!(
                f,
                "integration error: {message} (partial estimate {partial:e} ± {error_estimate:e})"
            ),
            Error::Convergence(msg) => write!(f, "convergence failure: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
