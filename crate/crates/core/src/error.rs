use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("coordinate {index} is not strictly positive ({value})")]
    NonPositiveInput { index: usize, value: f64 },

    #[error("vector norm {norm} is not 1")]
    NotUnitNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid economy specification: {0}")]
    InvalidSpec(String),

    #[error("model evaluation failed: {0}")]
    EvaluationFailure(String),

    #[error("equilibrium at {price:?} is not regular: |g| = {g:e} <= {tolerance:e}")]
    NonRegularEquilibrium {
        price: Vec<f64>,
        g: f64,
        tolerance: f64,
    },

    #[error("grid scan is only available for n in {{2, 3}} (n = {n})")]
    ScanInfeasible { n: usize },

    #[error("epsilon certification failed at t = {t}, p = {p:?} (|H| = {norm:e}, threshold {threshold:e})")]
    CertificationFailed {
        t: f64,
        p: Vec<f64>,
        norm: f64,
        threshold: f64,
    },

    #[error("equilibrium {price:?} lies outside the truncated sphere for epsilon = {epsilon}")]
    ContainmentViolated { price: Vec<f64>, epsilon: f64 },

    #[error("curve jacobian is rank deficient at t = {t} (smallest singular value {sigma_min:e})")]
    RankDeficient { t: f64, sigma_min: f64 },

    #[error("path tracing exceeded {max_steps} steps")]
    StepLimitExceeded { max_steps: usize },

    #[error("corrector diverged at t = {t} with step {step:e}")]
    CorrectorDiverged { t: f64, step: f64 },

    #[error("path left the truncated sphere at t = {t}, min coordinate {min_coord:e} <= {epsilon:e}")]
    PathLeftDomain {
        t: f64,
        min_coord: f64,
        epsilon: f64,
    },

    #[error("equilibrium {price:?} is not the endpoint of any traced arc")]
    CoverageGap { price: Vec<f64> },

    #[error("equilibrium {price:?} is the endpoint of more than one arc")]
    DuplicateEndpoint { price: Vec<f64> },

    #[error("arc endpoint (t = {t}, p = {p:?}) does not match any known zero")]
    UnmatchedEndpoint { t: f64, p: Vec<f64> },

    #[error("no transversal reference price found after {attempts} draws")]
    TransversalityFailure { attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
