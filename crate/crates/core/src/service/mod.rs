//! Alert queue backing the HTTP API and CLI: scanning, persistence,
//! annotation and re-ranking.

pub mod http;
pub mod scan;
pub mod store;

use thiserror::Error;

use crate::book::ReplayError;
use crate::feed::FeedError;
use crate::rank::RankError;
use crate::tcn::TcnError;

pub use scan::{merge_overlapping, scan_events, Candidate, Progress, DEFAULT_THRESHOLD};
pub use store::{AlertDetail, AlertRecord, AlertSummary, ExemplarSummary, SimilarExemplar, Status, Store};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown alert {0}")]
    UnknownAlert(u64),
    #[error("label must be 0, 1 or 2, got {0}")]
    InvalidLabel(u8),
    #[error("alert {0} is dismissed")]
    AlreadyDismissed(u64),
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
