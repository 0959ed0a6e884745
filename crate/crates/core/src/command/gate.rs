use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ast::{Command, CommandAst};
use super::mapping::{map_to_request, RequestSpec};
use crate::calculus::{evaluate_or_deny, Decision, EvalContext, LegalFrame, RequestKind};
use crate::canonical::{self, rfc3339, Digest};
use crate::scalar::{NationalId, Scalar, Values};
use crate::store::{query, Store, StoreError, StoreView, WriteEvent, WriteOp, WriteRequest};

/// Receipt ids are the first 32 hex digits of SHA-256 over
/// `receipt:<request digest>`.
pub fn receipt_id_for(request_digest: &Digest) -> String {
    Digest::of(format!("receipt:{request_digest}").as_bytes()).to_hex()[..32].to_string()
}

/// Where and when a command is evaluated.
#[derive(Debug, Clone, Default)]
pub struct GateContext {
    pub time: Option<DateTime<Utc>>,
    pub jurisdiction_tags: BTreeSet<String>,
    /// Extra context parameters (companion, session, ...). Command-derived
    /// parameters take precedence.
    pub params: BTreeMap<String, Scalar>,
    /// Digest of the signed envelope carrying the command, if any.
    pub envelope_digest: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Rows(Vec<Values>),
    Written(WriteEvent),
    Denied,
    Failed { code: String, message: String },
}

/// The answer to one command, permitted or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandResult {
    pub receipt_id: String,
    pub request_digest: Digest,
    pub request: RequestSpec,
    pub decision: Decision,
    pub outcome: Outcome,
}

impl CommandResult {
    pub fn event(&self) -> Option<&WriteEvent> {
        match &self.outcome {
            Outcome::Written(ev) => Some(ev),
            _ => None,
        }
    }
}

pub fn store_error_code(e: &StoreError) -> &'static str {
    match e {
        StoreError::DuplicateRegistry(_) => "DUPLICATE_REGISTRY",
        StoreError::InvalidSchema(_) => "INVALID_SCHEMA",
        StoreError::UnknownRegistry(_) => "UNKNOWN_REGISTRY",
        StoreError::UnknownField(_) => "UNKNOWN_FIELD",
        StoreError::SchemaViolation(_) => "SCHEMA_VIOLATION",
        StoreError::UnknownKey { .. } => "UNKNOWN_KEY",
        StoreError::DuplicateKey { .. } => "DUPLICATE_KEY",
        StoreError::StaleBefore { .. } => "STALE_BEFORE",
        StoreError::FutureSeq { .. } => "FUTURE_SEQ",
        StoreError::Selection(_) => "SELECTION_ERROR",
        StoreError::Corrupt(_) | StoreError::Replay(_) | StoreError::Io(_) => "STORE_FAILURE",
    }
}

/// On what authority an audited action happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authority {
    /// A command decided by the calculus.
    Gate {
        request_kind: RequestKind,
        permit: bool,
        decision_digest: Digest,
        missing: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// An administrative action by an official (defining registries,
    /// loading frames, bootstrap data).
    Admin { action: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub receipt_id: String,
    #[serde(with = "rfc3339")]
    pub at: DateTime<Utc>,
    pub requester: NationalId,
    pub request_digest: Digest,
    pub authority: Authority,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_seq: Option<u64>,
}

/// Append-only record of every gated decision and administrative action,
/// optionally mirrored to an NDJSON file.
pub struct AuditLog {
    file: Mutex<Option<File>>,
    entries: Mutex<Vec<AuditEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GateViolation {
    #[error("event {seq} has no audit entry for receipt {receipt_id}")]
    Unaudited { seq: u64, receipt_id: String },
    #[error("event {seq} was written under a denying decision")]
    WrittenOnDeny { seq: u64 },
}

impl Default for AuditLog {
    fn default() -> Self {
        AuditLog::in_memory()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            file: Mutex::new(None),
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let mut entries = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                entries.push(
                    serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
                );
            }
        }
        Ok(AuditLog {
            file: Mutex::new(Some(OpenOptions::new().create(true).append(true).open(path)?)),
            entries: Mutex::new(entries),
        })
    }

    pub fn append(&self, entry: AuditEntry) -> io::Result<()> {
        let mut file = self.file.lock().expect("audit lock poisoned");
        if let Some(f) = file.as_mut() {
            let mut line = canonical::to_canonical_bytes(&entry).expect("audit entries contain no floats");
            line.push(b'\n');
            f.write_all(&line)?;
        }
        self.entries.lock().expect("audit lock poisoned").push(entry);
        Ok(())
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().expect("audit lock poisoned").clone()
    }

    /// Every event's receipt must map to an audit entry that authorized it:
    /// a permitting gate decision or an administrative action.
    pub fn check_gate_completeness(&self, events: &[WriteEvent]) -> Result<(), GateViolation> {
        let entries = self.entries();
        let by_receipt: BTreeMap<&str, &AuditEntry> =
            entries.iter().map(|e| (e.receipt_id.as_str(), e)).collect();
        for ev in events {
            match by_receipt.get(ev.receipt_id.as_str()) {
                None => {
                    return Err(GateViolation::Unaudited {
                        seq: ev.seq,
                        receipt_id: ev.receipt_id.clone(),
                    })
                }
                Some(AuditEntry {
                    authority: Authority::Gate { permit: false, .. },
                    ..
                }) => return Err(GateViolation::WrittenOnDeny { seq: ev.seq }),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

fn request_digest(ast: &CommandAst, requester: &NationalId, at: DateTime<Utc>, seq: u64, ctx: &GateContext) -> Digest {
    canonical::canonical_digest(&json!({
        "command_digest": ast.digest,
        "requester": requester,
        "at": rfc3339::format(&at),
        "seq": seq,
        "jurisdiction_tags": ctx.jurisdiction_tags,
        "params": ctx.params,
        "envelope_digest": ctx.envelope_digest,
    }))
    .expect("request digests contain no floats")
}

/// Decides a command for `requester` and, if permitted, executes it.
///
/// Writes hold the store's writer lock from evaluation to append, so the
/// decision is made against exactly the state the write applies to. A deny
/// never touches the store. Every outcome is audited and answered.
pub fn gate_and_execute(
    ast: &CommandAst,
    requester: &NationalId,
    frames: &[LegalFrame],
    store: &Store,
    audit: &AuditLog,
    ctx: &GateContext,
) -> CommandResult {
    let time = ctx.time.unwrap_or_else(|| crate::clock::Clock::now(&crate::clock::SystemClock));
    let mut guard = ast.command.is_write().then(|| store.lock_writer());
    let view: StoreView = match &guard {
        Some(g) => g.view(),
        None => store.view(),
    };

    let registry = ast.command.registry();
    let mapped = map_to_request(ast, requester, view.schema(registry));
    let mut params = ctx.params.clone();
    params.extend(mapped.params.clone());
    let eval_ctx = EvalContext {
        time,
        jurisdiction_tags: ctx.jurisdiction_tags.clone(),
        request_kind: mapped.request_kind.clone(),
        params,
    };
    let decision = evaluate_or_deny(frames, &view, requester.as_str(), &eval_ctx);
    let request_digest = request_digest(ast, requester, time, view.seq(), ctx);
    let receipt_id = receipt_id_for(&request_digest);

    let outcome = if !decision.permit {
        Outcome::Denied
    } else {
        let executed = match (&ast.command, guard.as_mut()) {
            (
                Command::Read {
                    registry,
                    fields,
                    selection,
                },
                _,
            ) => query(&view, registry, &selection.to_condition(), fields).map(Outcome::Rows),
            (command, Some(g)) => {
                let op = match command {
                    Command::Insert { values, .. } => WriteOp::Insert(values.clone()),
                    Command::Update { key, set, .. } => WriteOp::Update {
                        key: key.to_string(),
                        set: set.clone(),
                    },
                    Command::Delete { key, .. } => WriteOp::Delete { key: key.to_string() },
                    Command::Read { .. } => unreachable!(),
                };
                g.apply(WriteRequest {
                    registry: registry.to_string(),
                    op,
                    requester: requester.clone(),
                    receipt_id: receipt_id.clone(),
                    command_digest: ast.digest,
                    at: time,
                    expected_before: None,
                })
                .map(Outcome::Written)
            }
            (_, None) => unreachable!("writes hold the writer lock"),
        };
        executed.unwrap_or_else(|e| Outcome::Failed {
            code: store_error_code(&e).to_string(),
            message: e.to_string(),
        })
    };

    let entry = AuditEntry {
        receipt_id: receipt_id.clone(),
        at: time,
        requester: requester.clone(),
        request_digest,
        authority: Authority::Gate {
            request_kind: mapped.request_kind.clone(),
            permit: decision.permit,
            decision_digest: decision.digest(),
            missing: decision.missing_names(),
            error: decision.error.as_ref().map(|e| e.code.clone()),
        },
        event_seq: match &outcome {
            Outcome::Written(ev) => Some(ev.seq),
            _ => None,
        },
    };
    if let Err(e) = audit.append(entry) {
        tracing::error!(error = %e, receipt_id, "audit append failed");
    }
    drop(guard);

    CommandResult {
        receipt_id,
        request_digest,
        request: mapped,
        decision,
        outcome,
    }
}
