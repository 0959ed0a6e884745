//! Wire formats shared by the endpoint and its clients.
//!
//! Every POST body is a signed [`Envelope`](crate::attest::Envelope) whose
//! `command_text` is either command-language text (`/command`) or the
//! canonical JSON of one of the request types below. Every answer is a
//! signed [`ResponseEnvelope`](crate::attest::ResponseEnvelope).

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attest::{KeyRecord, Receipt};
use crate::calculus::{Decision, DecisionError, RequestKind};
use crate::canonical::{rfc3339, Digest};
use crate::notify::{ChangeNotice, Payload};
use crate::scalar::{NationalId, Scalar, Values};
use crate::store::{RegistrySchema, WriteEvent};

pub const API_PREFIX: &str = "/ssgov/v1";

pub mod paths {
    pub const COMMAND: &str = "/ssgov/v1/command";
    pub const DECIDE: &str = "/ssgov/v1/decide";
    pub const SUBSCRIBE: &str = "/ssgov/v1/subscribe";
    pub const NOTICES: &str = "/ssgov/v1/notices";
    pub const ADMIN: &str = "/ssgov/v1/admin";
    pub const GAZETTE: &str = "/ssgov/v1/gazette";
    pub const HEALTH: &str = "/ssgov/v1/health";

    /// Endpoints accepting signed envelopes.
    pub const SIGNED: [&str; 5] = [COMMAND, DECIDE, SUBSCRIBE, NOTICES, ADMIN];
}

/// Machine-readable error codes, in the order the stages run.
pub mod codes {
    pub const MALFORMED_ENVELOPE: &str = "MALFORMED_ENVELOPE";
    pub const ENDPOINT_MISMATCH: &str = "ENDPOINT_MISMATCH";
    pub const AUTH_FAIL: &str = "AUTH_FAIL";
    pub const STALE_ENVELOPE: &str = "STALE_ENVELOPE";
    pub const REPLAYED_NONCE: &str = "REPLAYED_NONCE";
    pub const SYNTAX_ERROR: &str = "SYNTAX_ERROR";
    pub const UNKNOWN_KEYWORD: &str = "UNKNOWN_KEYWORD";
    pub const LIMIT_EXCEEDED: &str = "LIMIT_EXCEEDED";
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const NOT_AN_OFFICIAL: &str = "NOT_AN_OFFICIAL";
    pub const DENIED_PAYLOAD: &str = "DENIED_PAYLOAD";
    pub const INTERNAL: &str = "INTERNAL";
}

/// Body of `/decide`: evaluate one of the requester's own requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideRequest {
    /// Must equal the requester when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<NationalId>,
    pub request_kind: RequestKind,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
    /// Evaluation instant; defaults to the server clock.
    #[serde(default, with = "rfc3339::option", skip_serializing_if = "Option::is_none")]
    pub at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscribeRequest {
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoticesRequest {
    /// Only notices after this one are returned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<String>,
}

/// Body of `/admin`, accepted only from configured officials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdminAction {
    DefineRegistry { schema: RegistrySchema },
    LoadFrame { frame: Value },
    RegisterKey { record: KeyRecord },
}

/// Answer to `/command`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandReply {
    pub permit: bool,
    pub missing_atoms: Vec<String>,
    pub receipt: Receipt,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Values>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<WriteEvent>,
    /// Set when a permitted command could not be executed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<DecisionError>,
}

/// Answer to `/decide`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecideReply {
    pub permit: bool,
    pub missing_atoms: Vec<String>,
    pub receipt: Receipt,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminReply {
    pub receipt_id: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<WriteEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeReply {
    pub sub_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoticesReply {
    pub notices: Vec<ChangeNotice>,
}

/// One published location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GazetteEntry {
    /// Service name or `registry:<id>`.
    pub name: String,
    pub path: String,
    /// Digest of the registry schema, for registry entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<String>,
    pub frame_versions: Vec<String>,
    pub grammar_version: String,
    pub effective_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gazette {
    pub entries: Vec<GazetteEntry>,
    /// Public keys the service signs with.
    pub server_keys: Vec<KeyRecord>,
    /// Digest over entries and server keys.
    pub digest: Digest,
}

impl Gazette {
    pub fn new(mut entries: Vec<GazetteEntry>, server_keys: Vec<KeyRecord>) -> Self {
        entries.sort();
        let digest = crate::canonical::canonical_digest(&serde_json::json!({
            "entries": entries,
            "server_keys": server_keys,
        }))
        .expect("gazette has no floats");
        Gazette {
            entries,
            server_keys,
            digest,
        }
    }
}
