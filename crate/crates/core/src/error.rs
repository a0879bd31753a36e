use milp_core::MilpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown service id `{0}`")]
    UnknownService(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("no process models")]
    NoProcessModels,
    #[error("malformed scenario: {0}")]
    Malformed(String),
    #[error("step {step} of instance {instance} fits on no VM type")]
    NoCandidate { instance: u32, step: usize },
    #[error("solver failure: {0}")]
    Solver(#[from] MilpError),
    #[error("integrality residue {value} on `{var}`")]
    Unroundable { var: String, value: f64 },
    #[error("decoded objective {terms} disagrees with solver objective {solver}")]
    ObjectiveMismatch { terms: f64, solver: f64 },
    #[error("plan references VM {0} which the cloud no longer holds")]
    UnknownVm(u32),
    #[error("solver returned no feasible point")]
    NoIncumbent,
    #[error("decoded plan violates the model: {0}")]
    InvalidPlan(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CoreResult<T> = Result<T, CoreError>;
