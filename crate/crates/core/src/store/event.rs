use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::schema::RegistrySchema;
use crate::canonical::{self, rfc3339, Digest};
use crate::scalar::{NationalId, Values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Define,
    Insert,
    Update,
    Delete,
}

/// One entry of the append-only log.
///
/// `prev_hash` is the SHA-256 of the previous event's canonical line
/// (all zeroes for seq 1), so the log is a hash chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteEvent {
    pub seq: u64,
    #[serde(with = "rfc3339")]
    pub at: DateTime<Utc>,
    pub kind: EventKind,
    pub registry_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<RegistrySchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<Values>,
    pub requester: NationalId,
    pub receipt_id: String,
    pub command_digest: Digest,
    pub prev_hash: Digest,
}

impl WriteEvent {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("events contain no floats")
    }

    /// Hash of this event's canonical line; the next event's `prev_hash`.
    pub fn hash(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }
}
