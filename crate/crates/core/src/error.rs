use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point outside the factorizable neighborhood after {iterations} iterations (residual {residual:e})")]
    NonFactorizable { iterations: usize, residual: f64 },
    #[error("degenerate background at {location}")]
    DegenerateBackground { location: String },
    #[error("solver failed to converge at cell ({i}, {j}): residual {residual:e}")]
    SolverDivergence { i: usize, j: usize, residual: f64 },
    #[error("lift aborted at cell ({i}, {j}): {reason}")]
    LiftFailure { i: usize, j: usize, reason: String },
    #[error("transversality fails at {count} of {total} sample points")]
    Transversality { count: usize, total: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid leaf: {0}")]
    InvalidLeaf(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("out of scope: {0}")]
    OutOfScope(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {0}")]
    File(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
