use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("SVD did not converge after {sweeps} sweeps (max relative off-diagonal {off:e})")]
    Decomposition { sweeps: usize, off: f64 },

    #[error("degenerate ensemble: need at least 2 members, got {0}")]
    DegenerateEnsemble(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient population: have {have}, need {need}")]
    Insufficient { have: usize, need: usize },

    #[error("training diverged in ensemble member {member}: loss {loss}")]
    TrainingDivergence { member: usize, loss: f64 },

    #[error("policy diverged: {0}")]
    PolicyDivergence(String),

    #[error("invalid action {action} (action count {count})")]
    InvalidAction { action: usize, count: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("{path}: field `{field}`: {message}")]
    Config {
        path: String,
        field: String,
        message: String,
    },

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dimension(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Dimension {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
