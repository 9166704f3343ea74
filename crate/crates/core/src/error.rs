use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("singularity: {0}")]
    Singular(String),
    #[error("step size too large: {0}")]
    StepSize(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("inconsistent data: {0}")]
    Inconsistency(String),
    #[error("degenerate rate: {0}")]
    DegenerateRate(String),
    /// Boundary pair admits only a step profile.
    #[error("step profile required: {0}")]
    StepProfile(String),
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("frame error: {0}")]
    Frame(String),
    #[error("horizon too short: {0}")]
    Horizon(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
