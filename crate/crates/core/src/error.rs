use thiserror::Error;

/// A single invariant violation found while validating a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveTime { cluster: String, index: usize, time: f64 },
    DimensionMismatch { cluster: String, index: usize, expected: usize, found: usize },
    EmptyCluster { cluster: String },
    GroupPartitionInvalid(String),
    TiedEventTimes { time: f64 },
    NoObservations,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonPositiveTime { cluster, index, time } => {
                write!(f, "non-positive time {time} (cluster {cluster}, observation {index})")
            }
            Violation::DimensionMismatch { cluster, index, expected, found } => write!(
                f,
                "covariate length {found} != p = {expected} (cluster {cluster}, observation {index})"
            ),
            Violation::EmptyCluster { cluster } => write!(f, "cluster {cluster} has no observations"),
            Violation::GroupPartitionInvalid(msg) => write!(f, "invalid group partition: {msg}"),
            Violation::TiedEventTimes { time } => write!(f, "tied event times at t = {time}"),
            Violation::NoObservations => write!(f, "dataset has no observations"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset validation failed: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),

    #[error("no uncensored events in the data")]
    NoEvents,

    #[error("non-finite value while evaluating {0}")]
    NonFiniteResult(&'static str),

    #[error("zero denominator in the baseline hazard update at event index {0}")]
    ZeroDenominator(usize),

    #[error("Armijo line search failed on covariate group {group} after {halvings} step reductions")]
    LineSearchFailed { group: usize, halvings: usize },

    #[error("fold {0} contains no events")]
    FoldWithoutEvents(usize),

    #[error("invalid pseudo R^2 inputs: fitted log-likelihood {fit} is below null {null}")]
    InvalidLoglikPair { fit: f64, null: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate simulation config: {0}")]
    DegenerateConfig(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable error kind, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::NoEvents => "no_events",
            Error::NonFiniteResult(_) => "non_finite_result",
            Error::ZeroDenominator(_) => "zero_denominator",
            Error::LineSearchFailed { .. } => "line_search_failed",
            Error::FoldWithoutEvents(_) => "fold_without_events",
            Error::InvalidLoglikPair { .. } => "invalid_loglik_pair",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateConfig(_) => "degenerate_config",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
