use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("stability violation: dt = {dt:e} exceeds bound {bound:e}")]
    Stability { dt: f64, bound: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("conservativity violation at t = {time}: {detail}")]
    ConservativityViolation { time: f64, detail: String },

    #[error("search budget exceeded: {required} rollouts requested, limit {limit}")]
    SearchBudget { required: usize, limit: usize },

    #[error("invalid metric space: {0}")]
    InvalidMetric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence after {0} stages")]
    NoConvergence(usize),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
