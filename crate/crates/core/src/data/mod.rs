//! Interaction logs: parsing, sessionization, temporal partitioning and filtering.
//!
//! The pipeline is deterministic end to end. Records are grouped per user in
//! ascending id order, sessions are cut by an idle-gap threshold, and every
//! click lands in exactly one of three stages (global training, personal
//! training, test) or is counted as dropped by a filter.

mod parse;
mod partition;
mod persist;
mod session;

pub use parse::{parse_interactions, write_interactions, BehaviorTable, LogFormat};
pub use partition::{
    apply_cohorts, filter_dataset, partition_temporal, partition_temporal_with, prepare_split,
    split_users, DatasetSplit, MinClicksScope, PartitionConfig,
};
pub use persist::{write_split, SplitManifest};
pub use session::{sessionize, Click, Session};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kind of logged interaction.
///
/// Clicks are non-transactional and may only leave the device with consent.
/// Purchases, cart additions and favorites are transactional and are always
/// available to the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    Click,
    Purchase,
    Cart,
    Favorite,
}

impl Behavior {
    pub fn is_transactional(self) -> bool {
        !matches!(self, Behavior::Click)
    }
}

/// One user-item event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: u64,
    pub item_id: u64,
    pub category_id: u64,
    pub behavior: Behavior,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl InteractionRecord {
    pub fn click(user_id: u64, item_id: u64, category_id: u64, timestamp: u64) -> Self {
        Self {
            user_id,
            item_id,
            category_id,
            behavior: Behavior::Click,
            timestamp,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: unknown behavior token {token:?}")]
    UnknownBehavior { line: u64, token: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DataError {
    /// The offending token for [`DataError::UnknownBehavior`].
    pub fn unknown_token(&self) -> Option<&str> {
        match self {
            DataError::UnknownBehavior { token, .. } => Some(token),
            _ => None,
        }
    }
}
