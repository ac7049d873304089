use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample {0}")]
    EmptySample(usize),

    #[error("no observations")]
    NoObservations,

    #[error("invalid observation {index}: {reason}")]
    InvalidObservation { index: usize, reason: String },

    #[error("non-finite log-density {value} at observation {index} (sample {sample}, x = {covariates:?})")]
    NonFiniteDensity {
        index: usize,
        sample: usize,
        covariates: Vec<f64>,
        value: f64,
    },

    #[error("x = {0:?} has zero selection mass under all strata")]
    ZeroSelectionMass(Vec<f64>),

    #[error("observation in sample {sample} at x = {covariates:?} is inconsistent with its stratum")]
    InconsistentStratum { sample: usize, covariates: Vec<f64> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model requires {expected} strata, got {got}")]
    StrataCount { expected: usize, got: usize },

    #[error("support has {0} point(s); at least two are needed to profile g")]
    DegenerateSupport(usize),

    #[error("age {0} is outside the admissible range (age > -7.5)")]
    InvalidAge(f64),

    #[error("nuisance information block is singular (condition number {cond:.3e}); null direction {direction:?}")]
    SingularNuisance { cond: f64, direction: Vec<f64> },

    #[error("efficient information is indefinite (eigenvalue {0:.3e})")]
    Indefinite(f64),

    #[error("objective is not finite at params {0:?}")]
    NonFiniteObjective(Vec<f64>),

    #[error("fit did not converge after {iterations} iterations (|grad| = {grad_norm:.3e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("fixed-point iteration did not converge after {0} iterations")]
    FixedPointDiverged(usize),

    #[error("label mismatch: {0:?} vs {1:?}")]
    LabelMismatch(Vec<String>, Vec<String>),

    #[error("enumeration has {0} outcomes, limit is 10000")]
    EnumerationTooLarge(usize),

    #[error("finite difference sample is not finite at {0:?}")]
    NonFiniteSample(Vec<f64>),

    #[error("{failed} of {total} Monte Carlo replicates failed to fit")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
