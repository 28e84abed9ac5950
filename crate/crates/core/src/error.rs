use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LarxError {
    #[error("structural error: {0}")]
    Structure(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty sample")]
    EmptySample,
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("zero-variance column: {0}")]
    ZeroVariance(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("unknown series: {0}")]
    UnknownSeries(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),
    #[error("infeasible constraint: {0}")]
    Infeasible(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("no usable forecast windows: {0}")]
    EmptyRun(String),
}

impl LarxError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            LarxError::Structure(_) => "structure",
            LarxError::Dimension(_) => "dimension",
            LarxError::EmptySample => "empty_sample",
            LarxError::DegenerateSample(_) => "degenerate_sample",
            LarxError::ZeroVariance(_) => "zero_variance",
            LarxError::Domain(_) => "domain",
            LarxError::InsufficientHistory(_) => "insufficient_history",
            LarxError::UnknownSeries(_) => "unknown_series",
            LarxError::InvalidSpec(_) => "invalid_spec",
            LarxError::Singular(_) => "singular",
            LarxError::DegenerateConstraint(_) => "degenerate_constraint",
            LarxError::Infeasible(_) => "infeasible_constraint",
            LarxError::Numerical(_) => "numerical",
            LarxError::UndefinedMetric(_) => "undefined_metric",
            LarxError::EmptyRun(_) => "empty_run",
        }
    }
}

pub type Result<T> = std::result::Result<T, LarxError>;
