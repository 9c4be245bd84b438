use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("columns are linearly dependent: |u_{column}| = {norm:e}")]
    SingularInput { column: usize, norm: f64 },
    #[error("index {index} outside [{lo}, {hi}]")]
    IndexOutOfRange { index: i64, lo: i64, hi: i64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("singular matrix with negative weight exponent")]
    SingularAtNegativeExponent,
    #[error("integral diverges: exponent {exponent} on an interval touching zero")]
    DivergentIntegral { exponent: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ball does not satisfy the separation condition: {0}")]
    ConditionSigViolated(String),
    #[error("unknown catalog id: {0}")]
    UnknownCatalogId(String),
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("matrix rank does not match stratum (k = {k}): {detail}")]
    RankMismatch { k: usize, detail: String },
    #[error("perturbation norm {0} exceeds 1")]
    NormTooLarge(f64),
    #[error("degenerate epsilon grid: {0}")]
    DegenerateGrid(String),
    #[error("delta = {0} < 2: strong solutions are only available for delta >= 2")]
    DeltaTooSmall(f64),
    #[error("initial state must have positive determinant (det = {0})")]
    BadInitial(f64),
    #[error("alpha = {alpha} must exceed d - 1 = {min}")]
    AlphaTooSmall { alpha: f64, min: f64 },
    #[error("path hit the boundary; time change undefined")]
    BlowupPath,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
