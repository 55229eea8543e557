use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("divergent inductance: {0}")]
    Divergence(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("quadrature did not converge (estimate {estimate:e}): {msg}")]
    Quadrature { msg: String, estimate: f64 },
    #[error("fit failed after {} iterations: {msg}", trace.len())]
    Fit { msg: String, trace: Vec<f64> },
    #[error("no resonance found: {0}")]
    NoResonance(String),
    #[error("overcoupling inconsistency: {0}")]
    Overcoupled(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for usage/config/io problems, 2 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Format(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
