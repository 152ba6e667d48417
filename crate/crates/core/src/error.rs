use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite coefficient on path {path} at t = {t}: {what}")]
    Simulation { path: usize, t: f64, what: String },

    #[error("control evaluation failed on path {path} at t = {t}, x = {x:?}")]
    Control { path: usize, t: f64, x: Vec<f64> },

    #[error("stability guard tripped on path {path} at t = {t}: |a u| dt = {step} exceeds cap {cap}")]
    Stability { path: usize, t: f64, step: f64, cap: f64 },

    #[error("model lacks capability: {0}")]
    Capability(String),

    #[error("degenerate energy: all reference mass sits on H = +inf")]
    DegenerateEnergy,

    #[error("unreliable estimate: {0}")]
    Unreliable(String),

    #[error("solver instability at node {node:?}, t = {t}: {what}")]
    Solver { node: Vec<usize>, t: f64, what: String },

    #[error("degenerate importance weights: effective sample size {ess:.3} < 2")]
    DegenerateWeights { ess: f64 },

    #[error("no surviving paths out of {n_paths}")]
    DegenerateSurvival { n_paths: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("kernel entry ({row}, {col}) is not strictly positive: {value}")]
    KernelPositivity { row: usize, col: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (last residual {last_residual:e})")]
    NonConvergence {
        iterations: usize,
        last_residual: f64,
        history: Vec<f64>,
    },

    #[error("support violation: {0}")]
    Support(String),

    #[error("mass conservation violated at t = {t}: drift {drift:e}")]
    Conservation { t: f64, drift: f64 },

    #[error("negative density {value:e} at node {node:?}, t = {t}")]
    Positivity { node: Vec<usize>, t: f64, value: f64 },

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
