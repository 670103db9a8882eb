use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {} at {location}: {message}", path.display())]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("label {label} out of range for {num_classes} classes at line {line}")]
    LabelOutOfRange {
        label: i64,
        num_classes: usize,
        line: usize,
    },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("model has no loss-prediction head")]
    LossHeadMissing,

    #[error("pair ranking loss needs an even batch, got {0}")]
    OddBatch(usize),

    #[error("invalid probability distribution at row {row}: {reason}")]
    InvalidDistribution { row: usize, reason: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("mutual information estimate needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("budget {budget} exceeds pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("exhaustive k-center is limited to 12 points, got {0}")]
    InstanceTooLarge(usize),

    #[error("pool exhausted: need {needed} unlabeled samples, {available} left")]
    PoolExhausted { needed: usize, available: usize },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("infeasible budget {budget}: {reason}")]
    InfeasibleBudget { budget: usize, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("missing results: {0}")]
    MissingResults(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::Parse { .. }
                | Error::InvalidParameter { .. }
                | Error::ConfigMismatch(_)
                | Error::InfeasibleBudget { .. }
        )
    }
}
