use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("window has zero probability under the prior (normalizer {normalizer:e})")]
    ZeroProbabilityWindow { normalizer: f64 },

    #[error("observation {obs} has zero probability under the given belief")]
    ZeroProbabilityObservation { obs: usize },

    #[error("point {point:?} lies outside the quantizer range")]
    OutOfRange { point: Vec<f64> },

    #[error("exact enumeration needs {required:e} realizations, cap is {cap}")]
    EnumerationTooLarge { required: f64, cap: usize },

    #[error("joint chain has {classes} recurrent classes; a unique invariant measure does not exist")]
    MultipleRecurrentClasses { classes: usize },

    #[error("bad partition: {0}")]
    BadPartition(String),

    #[error("TD matrix A is singular (smallest/largest singular value {ratio:e})")]
    SingularA { ratio: f64 },

    #[error("generic basis without a verified contraction certificate; refusing to iterate")]
    NoConvergenceCertificate,

    #[error("iterate diverged at step {step}: |theta| = {norm:e} exceeds {threshold:e}")]
    DivergenceDetected { step: u64, norm: f64, threshold: f64 },

    #[error("feature Gram matrix is degenerate (sigma_min = {sigma_min:e})")]
    DegenerateGram { sigma_min: f64 },

    #[error("a Lipschitz constant for the observation density is required")]
    MissingLipschitzConstant,

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
