use thiserror::Error;

use crate::select::AicRow;

pub type Result<T> = std::result::Result<T, FttmError>;

#[derive(Debug, Error)]
pub enum FttmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("non-finite log-likelihood contribution at subject {subject}")]
    NonFinite { subject: usize },

    #[error("degenerate initialization: log-likelihood is -inf at the starting point")]
    DegenerateInitialization,

    #[error("information singular; reduce N0/N1")]
    SingularInformation,

    #[error("non-finite entries in observed information")]
    NonFiniteInformation,

    #[error("no grid combination converged ({} cells tried)", table.len())]
    NoConvergence { table: Vec<AicRow> },

    #[error("concordance undefined: no usable pairs")]
    ConcordanceUndefined,

    #[error("too many failed replications: {failed} of {reps}")]
    TooManyFailures { failed: usize, reps: usize },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FttmError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            FttmError::Domain(_) => "domain",
            FttmError::Range { .. } => "range",
            FttmError::InvalidData(_) => "invalid_data",
            FttmError::NonFinite { .. } => "non_finite",
            FttmError::DegenerateInitialization => "degenerate_initialization",
            FttmError::SingularInformation => "singular_information",
            FttmError::NonFiniteInformation => "non_finite_information",
            FttmError::NoConvergence { .. } => "no_convergence",
            FttmError::ConcordanceUndefined => "concordance_undefined",
            FttmError::TooManyFailures { .. } => "too_many_failures",
            FttmError::MissingColumn(_) => "missing_column",
            FttmError::Parse(_) => "parse",
            FttmError::Io(_) => "io",
            FttmError::Csv(_) => "csv",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        FttmError::Domain(msg.into())
    }
}
