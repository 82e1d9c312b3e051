use thiserror::Error;

/// Errors raised across the fitting, selection, and simulation pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("too few exceedances: got {got}, need at least {need}")]
    TooFewExceedances { got: usize, need: usize },

    #[error("too few observations: got {got}, need at least {need}")]
    TooFewObservations { got: usize, need: usize },

    #[error("GPD fit did not converge: {0}")]
    GpdNonConvergence(String),

    #[error("argument {value} outside domain {domain}")]
    DomainError { value: f64, domain: &'static str },

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("sample correlation matrix is singular")]
    SingularCorrelation,

    #[error("graphical lasso did not converge after {sweeps} sweeps (gap {gap:.3e})")]
    NotConverged { sweeps: usize, gap: f64 },

    #[error("node {node} out of range for graph on {n_nodes} nodes")]
    InvalidNode { node: usize, n_nodes: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("too few excesses above dependence threshold: got {got}, need {need}")]
    TooFewExcesses { got: usize, need: usize },

    #[error("too few joint exceedances: got {got}, need {need}")]
    TooFewJointExceedances { got: usize, need: usize },

    #[error("fewer than {need} rows qualify for tail-probability estimation (got {got})")]
    InsufficientTailRows { got: usize, need: usize },

    #[error("positive-definite projection failed: {0}")]
    PdProjectionFailed(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("graph selection failed: only {succeeded} of {total} conditioning sites fitted")]
    SelectionFailed { succeeded: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model is incomplete: {0}")]
    PartialModel(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
