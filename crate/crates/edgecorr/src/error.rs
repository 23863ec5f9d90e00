use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("variable not in factor scope: {0}")]
    Scope(String),
    #[error("partition function is zero (all joint mass vanishes)")]
    ZeroPartition,
    #[error("degenerate parameter update: {0}")]
    DegenerateUpdate(String),
    #[error("conditioning on a zero-probability state: {0}")]
    ZeroConditional(String),
    #[error("belief places mass on a zero potential entry: {0}")]
    Support(String),
    #[error("enumeration over {states} states exceeds budget of {budget}")]
    BudgetExceeded { states: usize, budget: usize },
    #[error("infeasible generator spec: {0}")]
    InfeasibleSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
