use thiserror::Error;

pub type Result<T, E = AdaptError> = core::result::Result<T, E>;

/// A configuration field that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class index {class} out of range for {classes} classes")]
    ClassIndexOutOfRange { class: usize, classes: usize },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("empty stream")]
    EmptyStream,

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("expected a unit vector, found norm {norm}")]
    NotUnitNorm { norm: f64 },

    #[error("invalid soft label: {0}")]
    InvalidSoftLabel(&'static str),

    #[error("invalid prototype set: {0}")]
    InvalidPrototypes(&'static str),
}
