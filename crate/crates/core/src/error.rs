use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {index}: expected input width {expected}, got {got}")]
    WidthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid layer spec: {0}")]
    InvalidLayerSpec(String),

    #[error("layer {0} is not a valid trainable layer")]
    InvalidLayer(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("trainable layer set is empty")]
    EmptyTrainable,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid privacy parameter: {0}")]
    Privacy(String),

    #[error("target epsilon {target} unreachable with noise multiplier in [{lo}, {hi}]")]
    BudgetInfeasible { target: f64, lo: f64, hi: f64 },

    #[error(
        "privacy budget violated: accounted epsilon {accounted} exceeds configured {configured}"
    )]
    BudgetViolation { accounted: f64, configured: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
