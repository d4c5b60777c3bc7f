use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value from field `{field}` at t={t}, x={x:?}")]
    Evaluation { field: String, t: f64, x: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("epsilon {epsilon} is under-resolved on this grid; need epsilon >= {min_epsilon}")]
    UnderResolved { epsilon: f64, min_epsilon: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("size overflow: {0}")]
    Size(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("stability guard violated: {reason}; suggested dt <= {suggested_dt:e}")]
    Stability { reason: String, suggested_dt: f64 },

    #[error("model invariant violated: {0}")]
    Invariant(String),

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("test function error: {0}")]
    TestFunction(String),

    #[error("observation diffusion is near-singular at t={t} (|det| = {det:e})")]
    Invertibility { t: f64, det: f64 },

    #[error("unnormalized density lost positive mass at step {step} (mass = {mass:e})")]
    Degeneracy { step: usize, mass: f64 },

    #[error("Picard iteration did not reach tol {tol:e} in {iterations} iterations (last difference {last:e})")]
    NonConvergence {
        tol: f64,
        iterations: usize,
        last: f64,
        log: Vec<f64>,
    },

    #[error("oracle not applicable: {0}")]
    OracleNotApplicable(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
