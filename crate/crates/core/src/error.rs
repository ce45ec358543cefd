use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no variants shared between the summary set and the correlation matrix")]
    EmptyIntersection,

    #[error("duplicate variant id: {0}")]
    DuplicateVariant(String),

    #[error("invalid summary data: {0}")]
    InvalidSummary(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("correlation matrix is not symmetric within tolerance {tolerance}: max asymmetry {max_asymmetry}")]
    Asymmetric { tolerance: f64, max_asymmetry: f64 },

    #[error("correlation entry out of range at ({row}, {col}): {value}")]
    CorrelationOutOfRange { row: usize, col: usize, value: f64 },

    #[error("weighting matrix is singular")]
    SingularWeightMatrix,

    #[error("weighting matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("estimate undefined: {0}")]
    UndefinedEstimate(String),

    #[error("missing minor allele frequency for variants: {}", .0.join(", "))]
    MissingMaf(Vec<String>),

    #[error("non-finite eigenvalues encountered")]
    NonFiniteEigenvalues,

    #[error("singular system{}", if .collinear.is_empty() { String::new() } else { format!("; collinear columns: {}", .collinear.join(", ")) })]
    SingularSystem { collinear: Vec<String> },

    #[error("zero-variance allele score")]
    ZeroVarianceScore,

    #[error("zero-variance genotype column: {0}")]
    ZeroVarianceColumn(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
