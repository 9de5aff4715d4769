use thiserror::Error;

use crate::backend::{BackendError, TokenId};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("document is empty")]
    EmptyDocument,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("token {id} at position {position} has zero probability")]
    ZeroProbability { position: usize, id: TokenId },
    #[error("distributions were not retained; rerun with retain_dist > 0")]
    DistributionsNotRetained,
    #[error("nothing to compare: {0}")]
    NothingToCompare(String),
    #[error("invalid cloze item {source_id}: {reason}")]
    InvalidItem { source_id: String, reason: String },
    #[error("no outcomes to score")]
    NoOutcomes,
}
