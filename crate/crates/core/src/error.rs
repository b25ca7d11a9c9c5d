use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("population requires n ≥ 2, got {0}")]
    TooFewUnits(usize),

    #[error("unit {unit}: {reason}")]
    InvalidUnit { unit: String, reason: String },

    #[error("{label} labels must be present on all units or on none")]
    PartialLabels { label: &'static str },

    #[error("invalid decimal {text:?}: {reason}")]
    InvalidNumber { text: String, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("assignment incompatible with design: {0}")]
    IncompatibleAssignment(String),

    #[error("support size {support} exceeds the enumeration cap {cap}")]
    SupportTooLarge { support: String, cap: u64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
