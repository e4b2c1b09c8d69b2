use thiserror::Error;

use crate::allocator::RunRecord;
use crate::lp::LpStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The null action must carry zero reward and zero consumption.
    #[error("null action carries nonzero reward or consumption at step {step}, state {state}")]
    NullActionNotFree { step: usize, state: usize },

    #[error("LP solve finished with status {status:?} (residual {residual:e})")]
    Solver { status: LpStatus, residual: f64 },

    /// A run stopped early; `partial` holds every completed episode.
    #[error("run aborted in episode {episode}: {source}")]
    Aborted { episode: usize, source: Box<Error>, partial: Box<RunRecord> },

    #[error("enumeration guard exceeded: {0} candidates")]
    TooLarge(u128),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
