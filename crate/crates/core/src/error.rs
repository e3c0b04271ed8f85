use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("exponent overflow: (Ax)_{index} = {value} exceeds the representable range")]
    Overflow { index: usize, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("singular Hessian: eigmin {eigmin:e} below tolerance {tol:e}")]
    SingularHessian { eigmin: f64, tol: f64 },

    #[error("non-finite iterate at step {0}")]
    NonFiniteIterate(usize),

    #[error("sampled rows are rank deficient ({rows} rows kept, dimension {dim})")]
    SamplingDegenerate { rows: usize, dim: usize },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("middle matrix is not positive definite (eigmin {0:e})")]
    MidNotPd(f64),

    #[error("could not sample a pair meeting the probe preconditions: {0}")]
    SamplingFailure(String),

    #[error("trace has no planted optimum; error to optimum is unavailable")]
    MissingPlantedOptimum,

    #[error("pool of {pool} vectors is too small to draw {requested}")]
    PoolTooSmall { pool: usize, requested: usize },

    #[error("instance generation failed: {0}")]
    GenerationFailure(String),

    #[error("loss evaluation returned a non-finite value at offset {0}")]
    NonFiniteEvaluation(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
