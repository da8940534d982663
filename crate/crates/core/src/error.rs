use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// The CLI maps these onto exit codes through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        /// 1-based data row (header excluded).
        row: usize,
        column: String,
        message: String,
    },

    #[error("input is empty: {0}")]
    EmptyInput(String),

    #[error("no clusters left after filtering (minimum size {min_size})")]
    EmptyResult { min_size: usize },

    #[error("transform error at row {row}: {message}")]
    Transform { row: usize, message: String },

    #[error("inconsistent superblock: cluster '{cluster}' appears in superblocks '{first}' and '{second}'")]
    SuperblockConflict {
        cluster: String,
        first: String,
        second: String,
    },

    #[error("singular or undersized clusters: {}", .ids.join(", "))]
    SingularClusters { ids: Vec<String> },

    #[error("pooled design matrix is rank deficient")]
    SingularDesign,

    #[error("degenerate superblocks (fewer than 2 clusters): {}", .labels.join(", "))]
    DegenerateSuperblocks { labels: Vec<String> },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("invalid hypothesis: {0}")]
    Hypothesis(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("{failures} of {reps} replications failed (more than 1%)")]
    TooManyFailures { failures: usize, reps: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping of errors used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input, schema, configuration or hypothesis.
    Usage,
    /// Clusters or superblocks that cannot be estimated.
    Singular,
    /// Covariance matrices that cannot be inverted safely.
    Conditioning,
    /// Everything else (I/O, simulation aborts).
    Runtime,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::EmptyResult { .. }
            | Error::Transform { .. }
            | Error::SuperblockConflict { .. }
            | Error::Configuration(_)
            | Error::Hypothesis(_)
            | Error::Input(_)
            | Error::Shape(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorCategory::Usage,
            Error::SingularClusters { .. }
            | Error::SingularDesign
            | Error::DegenerateSuperblocks { .. } => ErrorCategory::Singular,
            Error::Conditioning(_) | Error::NotPositiveSemidefinite { .. } => {
                ErrorCategory::Conditioning
            }
            Error::TooManyFailures { .. } | Error::Io(_) => ErrorCategory::Runtime,
        }
    }
}
