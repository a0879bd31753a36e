use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("variable `{0}` has invalid bounds (lower must be finite and <= upper)")]
    InvalidBounds(String),
    #[error("`{0}` references an undeclared variable or a non-finite coefficient")]
    UndeclaredVariable(String),
    #[error("integer variable `{0}` must have finite bounds")]
    UnboundedInteger(String),
    #[error("problem is unbounded")]
    Unbounded,
    #[error("enumeration grid has {points} points, limit is {limit}")]
    GridTooLarge { points: f64, limit: f64 },
    #[error("no value supplied for variable `{0}`")]
    MissingValue(String),
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("LP parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type MilpResult<T> = Result<T, MilpError>;
