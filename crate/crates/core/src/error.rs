use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parse failures of the binary tensor container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorFormatError {
    #[error("bad magic bytes {found:?}, expected \"LSAD\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {0}, expected 1")]
    UnsupportedVersion(u32),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload size mismatch: dims require {expected} bytes, found {actual}")]
    PayloadMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    TensorFormat {
        path: PathBuf,
        #[source]
        source: TensorFormatError,
    },

    #[error("invalid JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Every offense found while validating an input document.
    #[error("validation failed with {} error(s):\n  - {}", .0.len(), .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("rule {index}: unknown rule kind {kind:?}")]
    UnknownRuleKind { index: usize, kind: String },

    #[error("rule {rule}: references undeclared interest {class:?}")]
    UndeclaredInterest { rule: String, class: String },

    #[error("rule {rule}: {reason}")]
    InvalidRule { rule: String, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: vector norm {norm} is not unit")]
    NotNormalized { context: String, norm: f64 },

    #[error("coreset budget {budget} out of range for {points} points")]
    BudgetOutOfRange { budget: usize, points: usize },

    #[error("invalid coreset ratio {0}, expected a value in (0, 1]")]
    InvalidRatio(f64),

    #[error("degenerate mask for interest instance {0}")]
    DegenerateMask(String),

    #[error("zero vector in {0}")]
    ZeroVector(&'static str),

    #[error("label {0:?} missing from text bank")]
    LabelMissing(String),

    #[error("cannot upsample {height}x{width} map to side {side}")]
    SideTooSmall {
        side: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("unscored test images: {}", .0.join(", "))]
    Unscored(Vec<String>),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("stage {stage} failed on image {image_id}: {source}")]
    Stage {
        stage: &'static str,
        image_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str, image_id: &str) -> Self {
        Error::Stage {
            stage,
            image_id: image_id.to_string(),
            source: Box::new(self),
        }
    }

    /// Whether the error stems from malformed inputs (as opposed to a runtime
    /// failure). The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::Validation(_)
                | Error::Json { .. }
                | Error::UnknownRuleKind { .. }
                | Error::UndeclaredInterest { .. }
                | Error::InvalidRule { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidRatio(_)
                | Error::InfeasibleSpec(_)
        )
    }
}
