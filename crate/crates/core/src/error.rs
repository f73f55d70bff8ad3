use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("row {row} sums to {sum}, expected {expected}")]
    RowSum { row: usize, sum: f64, expected: f64 },

    #[error("entry ({row}, {col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("weight vector entry {index} = {value} is not strictly positive")]
    InvalidWeight { index: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("schedule failed at t = {t}: {reason}")]
    Schedule { t: usize, reason: String },

    #[error("noise table exhausted at t = {t} (length {len})")]
    ExhaustedTable { t: usize, len: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid learning function: {0}")]
    InvalidLearningFunction(String),

    #[error("declared derivative bounds [{inf}, {sup}] contradicted by f'({at}) = {value}")]
    InconsistentDeclaration { inf: f64, sup: f64, at: f64, value: f64 },

    #[error("covariance is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("limit matrix is not rank one (row spread {0:e})")]
    NotRankOne(f64),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("trajectory too short: {0}")]
    TrajectoryTooShort(String),

    #[error("scenario parse error at {pointer}: {message}")]
    Parse { pointer: String, message: String },

    #[error("unknown generator {name:?}; known generators: {known}")]
    UnknownGenerator { name: String, known: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown catalog id {0:?}")]
    UnknownCatalogId(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
