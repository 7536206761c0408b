use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid KPI specification: {0}")]
    InvalidSpec(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("assignment violates constraint: {0}")]
    ConstraintViolation(String),

    #[error("Fisher information matrix is singular (condition number {cond:.3e}); {parameter} is unobservable")]
    SingularFim { parameter: &'static str, cond: f64 },

    #[error("linear program solver failure: {0}")]
    Solver(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state budget exceeded: {states} states needed, budget {budget}")]
    StateBudget { states: u64, budget: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
