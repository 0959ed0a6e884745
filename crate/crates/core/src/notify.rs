//! Subscriptions re-evaluated on a schedule, emitting signed change notices.
//!
//! A query subscription re-runs a `READ` as its owner; a decision watch
//! re-evaluates one of the owner's own requests. The first cycle only
//! records a baseline. Later cycles emit a notice exactly when the result
//! digest moves. The owner's read permission is checked every cycle, and a
//! subscription whose permission lapsed reports that once and then stays
//! silent until the permission returns.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use ed25519_dalek::{SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::attest;
use crate::calculus::{evaluate_or_deny, Decision, EvalContext, LegalFrame, RequestKind};
use crate::canonical::{self, rfc3339, Digest};
use crate::command::{map_to_request, parse, Command};
use crate::scalar::{NationalId, Scalar, Values};
use crate::store::{query, AsOf, Store, StoreView};

pub const DEFAULT_INTERVAL_SECS: u64 = 24 * 60 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// A `READ` command whose result set is watched.
    QueryDiff { command: String },
    /// One of the owner's own requests whose decision is watched.
    DecisionWatch {
        request_kind: RequestKind,
        #[serde(default)]
        params: BTreeMap<String, Scalar>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub sub_id: String,
    pub owner: NationalId,
    pub payload: Payload,
    pub interval_secs: u64,
    #[serde(with = "rfc3339")]
    pub next_due: DateTime<Utc>,
    #[serde(default)]
    pub last_digest: Option<Digest>,
    #[serde(default)]
    pub last_permit: Option<bool>,
    #[serde(default)]
    pub last_rows: Option<BTreeMap<String, Values>>,
    #[serde(default)]
    pub lapsed: bool,
    #[serde(default)]
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoticeKind {
    Change,
    PermissionLapsed,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeNotice {
    pub notice_id: String,
    pub sub_id: String,
    pub owner: NationalId,
    pub kind: NoticeKind,
    #[serde(with = "rfc3339")]
    pub at: DateTime<Utc>,
    pub before: Option<Digest>,
    pub after: Option<Digest>,
    pub delta: String,
    pub server_key_id: String,
    pub signature: String,
}

impl ChangeNotice {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("notices serialize");
        v.as_object_mut().expect("object").remove("signature");
        canonical::canonical_value_bytes(&v).expect("notices contain no floats")
    }

    pub fn verify_with(&self, key: &VerifyingKey) -> bool {
        attest::verify(&self.signing_bytes(), &self.signature, key)
    }
}

#[derive(Debug, Error)]
pub enum NotifyError {
    #[error("payload denied: {0}")]
    DeniedPayload(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("interval must be at least one second")]
    BadInterval,
    #[error("unknown subscription {0}")]
    UnknownSubscription(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NotifyError {
    pub fn code(&self) -> &'static str {
        match self {
            NotifyError::DeniedPayload(_) => "DENIED_PAYLOAD",
            NotifyError::InvalidPayload(_) | NotifyError::BadInterval => "INVALID_PAYLOAD",
            NotifyError::UnknownSubscription(_) => "UNKNOWN_SUBSCRIPTION",
            NotifyError::Io(_) => "INTERNAL",
        }
    }
}

/// What a cycle evaluates against.
pub struct CycleEnv<'a> {
    pub frames: &'a [LegalFrame],
    pub store: &'a Store,
    /// Jurisdiction tags in force at a given instant.
    pub tags_at: &'a dyn Fn(DateTime<Utc>) -> BTreeSet<String>,
}

enum Observed {
    Denied(Decision),
    Rows(BTreeMap<String, Values>),
    Decision(Decision),
}

fn decision_digest(d: &Decision) -> Digest {
    canonical::canonical_digest(&json!({"permit": d.permit, "missing": d.missing_names()})).expect("no floats")
}

fn describe_kind(k: &RequestKind) -> String {
    k.to_string()
}

/// Subscriptions, their state and the notice outbox.
pub struct Notifier {
    dir: Option<PathBuf>,
    key_id: String,
    key: SigningKey,
    state: Mutex<State>,
}

#[derive(Default)]
struct State {
    subs: BTreeMap<String, Subscription>,
    outbox: Vec<ChangeNotice>,
    outbox_file: Option<File>,
    counter: u64,
}

impl Notifier {
    pub fn in_memory(key_id: impl Into<String>, key: SigningKey) -> Self {
        Notifier {
            dir: None,
            key_id: key_id.into(),
            key,
            state: Mutex::new(State::default()),
        }
    }

    /// Persists subscriptions to `dir/subscriptions.json` and notices to
    /// `dir/outbox.ndjson`.
    pub fn open(dir: impl AsRef<Path>, key_id: impl Into<String>, key: SigningKey) -> Result<Self, NotifyError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut state = State::default();
        let subs_path = dir.join("subscriptions.json");
        if subs_path.exists() {
            let subs: Vec<Subscription> = serde_json::from_slice(&fs::read(&subs_path)?)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            state.subs = subs.into_iter().map(|s| (s.sub_id.clone(), s)).collect();
        }
        let outbox_path = dir.join("outbox.ndjson");
        if outbox_path.exists() {
            for line in BufReader::new(File::open(&outbox_path)?).lines() {
                let line = line?;
                if !line.is_empty() {
                    state.outbox.push(
                        serde_json::from_str(&line)
                            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
                    );
                }
            }
        }
        state.counter = (state.subs.len() + state.outbox.len()) as u64;
        state.outbox_file = Some(OpenOptions::new().create(true).append(true).open(&outbox_path)?);
        Ok(Notifier {
            dir: Some(dir),
            key_id: key_id.into(),
            key,
            state: Mutex::new(state),
        })
    }

    fn observe(&self, sub: &Subscription, env: &CycleEnv<'_>, view: &StoreView, now: DateTime<Utc>) -> Result<Observed, String> {
        let tags = (env.tags_at)(now);
        match &sub.payload {
            Payload::QueryDiff { command } => {
                let ast = parse(command).map_err(|e| e.to_string())?;
                let Command::Read {
                    registry,
                    fields,
                    selection,
                } = &ast.command
                else {
                    return Err("only READ commands can be watched".into());
                };
                let spec = map_to_request(&ast, &sub.owner, view.schema(registry));
                let ctx = EvalContext {
                    time: now,
                    jurisdiction_tags: tags,
                    request_kind: spec.request_kind,
                    params: spec.params,
                };
                let d = evaluate_or_deny(env.frames, view, sub.owner.as_str(), &ctx);
                if !d.permit {
                    return Ok(Observed::Denied(d));
                }
                let schema = view.schema(registry).ok_or("registry vanished")?;
                let mut all = fields.clone();
                if !all.contains(&schema.key_field) {
                    all.push(schema.key_field.clone());
                }
                let rows = query(view, registry, &selection.to_condition(), &all).map_err(|e| e.to_string())?;
                Ok(Observed::Rows(
                    rows.into_iter()
                        .map(|mut r| {
                            let key = r.get(&schema.key_field).map(|k| k.to_string()).unwrap_or_default();
                            if !fields.contains(&schema.key_field) {
                                r.remove(&schema.key_field);
                            }
                            (key, r)
                        })
                        .collect(),
                ))
            }
            Payload::DecisionWatch { request_kind, params } => {
                let ctx = EvalContext {
                    time: now,
                    jurisdiction_tags: tags,
                    request_kind: request_kind.clone(),
                    params: params.clone(),
                };
                Ok(Observed::Decision(evaluate_or_deny(env.frames, view, sub.owner.as_str(), &ctx)))
            }
        }
    }

    /// Registers a subscription after checking the payload as the owner.
    /// Returns the new id.
    pub fn subscribe(
        &self,
        owner: NationalId,
        payload: Payload,
        interval_secs: Option<u64>,
        env: &CycleEnv<'_>,
        now: DateTime<Utc>,
    ) -> Result<String, NotifyError> {
        let interval_secs = interval_secs.unwrap_or(DEFAULT_INTERVAL_SECS);
        if interval_secs == 0 {
            return Err(NotifyError::BadInterval);
        }
        let mut sub = Subscription {
            sub_id: String::new(),
            owner,
            payload,
            interval_secs,
            next_due: now,
            last_digest: None,
            last_permit: None,
            last_rows: None,
            lapsed: false,
            last_error: None,
        };
        if let Payload::QueryDiff { .. } = &sub.payload {
            match self.observe(&sub, env, &env.store.view(), now) {
                Ok(Observed::Denied(d)) => return Err(NotifyError::DeniedPayload(d.missing_names().join(", "))),
                Ok(_) => {}
                Err(e) => return Err(NotifyError::InvalidPayload(e)),
            }
        }
        let mut st = self.state.lock().expect("notifier lock poisoned");
        st.counter += 1;
        sub.sub_id = Digest::of(format!("sub:{}:{}:{}", sub.owner, st.counter, rfc3339::format(&now)).as_bytes())
            .to_hex()[..16]
            .to_string();
        let id = sub.sub_id.clone();
        st.subs.insert(id.clone(), sub);
        self.persist_subs(&st)?;
        Ok(id)
    }

    pub fn unsubscribe(&self, owner: &NationalId, sub_id: &str) -> Result<(), NotifyError> {
        let mut st = self.state.lock().expect("notifier lock poisoned");
        match st.subs.get(sub_id) {
            Some(s) if &s.owner == owner => {
                st.subs.remove(sub_id);
                self.persist_subs(&st)
            }
            _ => Err(NotifyError::UnknownSubscription(sub_id.to_string())),
        }
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.state.lock().expect("notifier lock poisoned").subs.values().cloned().collect()
    }

    /// Every notice emitted so far, oldest first.
    pub fn outbox(&self) -> Vec<ChangeNotice> {
        self.state.lock().expect("notifier lock poisoned").outbox.clone()
    }

    pub fn notices_for(&self, owner: &NationalId) -> Vec<ChangeNotice> {
        self.outbox().into_iter().filter(|n| &n.owner == owner).collect()
    }

    /// Runs every subscription due at `now` against the store as of `now`.
    pub fn run_cycle(&self, env: &CycleEnv<'_>, now: DateTime<Utc>) -> Result<Vec<ChangeNotice>, NotifyError> {
        let view = match env.store.as_of(AsOf::Instant(now)) {
            Ok(v) => v,
            Err(e) => {
                tracing::error!(error = %e, "notification cycle could not read the store");
                return Ok(Vec::new());
            }
        };
        let mut st = self.state.lock().expect("notifier lock poisoned");
        let due: Vec<String> = st
            .subs
            .values()
            .filter(|s| s.next_due <= now)
            .map(|s| s.sub_id.clone())
            .collect();
        let mut emitted = Vec::new();
        for id in due {
            let mut sub = st.subs[&id].clone();
            sub.next_due = now + Duration::seconds(sub.interval_secs as i64);
            let notice = match self.observe(&sub, env, &view, now) {
                Err(e) => {
                    let first = sub.last_error.as_deref() != Some(e.as_str());
                    sub.last_error = Some(e.clone());
                    first.then_some((NoticeKind::Error, None, None, e))
                }
                Ok(Observed::Denied(d)) => {
                    sub.last_error = None;
                    let first = !sub.lapsed;
                    sub.lapsed = true;
                    first.then(|| {
                        (
                            NoticeKind::PermissionLapsed,
                            sub.last_digest,
                            None,
                            format!("read permission lapsed (missing {})", d.missing_names().join(", ")),
                        )
                    })
                }
                Ok(Observed::Rows(rows)) => {
                    sub.last_error = None;
                    sub.lapsed = false;
                    let after = canonical::canonical_digest(&rows).expect("no floats");
                    let change = match (&sub.last_digest, &sub.last_rows) {
                        (Some(before), Some(old)) if *before != after => {
                            Some((NoticeKind::Change, Some(*before), Some(after), row_delta(old, &rows)))
                        }
                        _ => None,
                    };
                    sub.last_digest = Some(after);
                    sub.last_rows = Some(rows);
                    change
                }
                Ok(Observed::Decision(d)) => {
                    sub.last_error = None;
                    let after = decision_digest(&d);
                    let kind = match &sub.payload {
                        Payload::DecisionWatch { request_kind, .. } => describe_kind(request_kind),
                        Payload::QueryDiff { .. } => unreachable!(),
                    };
                    let change = match (sub.last_digest, sub.last_permit) {
                        (Some(before), Some(was)) if before != after => {
                            let delta = match (was, d.permit) {
                                (false, true) => format!("permission granted: {kind}"),
                                (true, false) => format!(
                                    "permission cancelled: {kind} (missing {})",
                                    d.missing_names().join(", ")
                                ),
                                _ => format!("missing eligibilities now: {}", d.missing_names().join(", ")),
                            };
                            Some((NoticeKind::Change, Some(before), Some(after), delta))
                        }
                        _ => None,
                    };
                    sub.last_digest = Some(after);
                    sub.last_permit = Some(d.permit);
                    change
                }
            };
            if let Some((kind, before, after, delta)) = notice {
                st.counter += 1;
                let n = self.sign_notice(ChangeNotice {
                    notice_id: format!("{}-{:06}", sub.sub_id, st.counter),
                    sub_id: sub.sub_id.clone(),
                    owner: sub.owner.clone(),
                    kind,
                    at: now,
                    before,
                    after,
                    delta,
                    server_key_id: self.key_id.clone(),
                    signature: String::new(),
                });
                if let Some(f) = st.outbox_file.as_mut() {
                    let mut line = canonical::to_canonical_bytes(&n).expect("no floats");
                    line.push(b'\n');
                    f.write_all(&line)?;
                }
                st.outbox.push(n.clone());
                emitted.push(n);
            }
            st.subs.insert(id, sub);
        }
        self.persist_subs(&st)?;
        Ok(emitted)
    }

    fn sign_notice(&self, mut n: ChangeNotice) -> ChangeNotice {
        n.signature = attest::sign(&n.signing_bytes(), &self.key);
        n
    }

    fn persist_subs(&self, st: &State) -> Result<(), NotifyError> {
        if let Some(dir) = &self.dir {
            let subs: Vec<&Subscription> = st.subs.values().collect();
            let tmp = dir.join("subscriptions.json.tmp");
            fs::write(&tmp, canonical::to_canonical_bytes(&subs).expect("no floats"))?;
            fs::rename(tmp, dir.join("subscriptions.json"))?;
        }
        Ok(())
    }
}

fn row_delta(old: &BTreeMap<String, Values>, new: &BTreeMap<String, Values>) -> String {
    let added: Vec<&str> = new.keys().filter(|k| !old.contains_key(*k)).map(String::as_str).collect();
    let removed: Vec<&str> = old.keys().filter(|k| !new.contains_key(*k)).map(String::as_str).collect();
    let changed: Vec<&str> = new
        .iter()
        .filter(|(k, v)| old.get(*k).is_some_and(|o| o != *v))
        .map(|(k, _)| k.as_str())
        .collect();
    let mut parts = Vec::new();
    for (label, keys) in [("added", added), ("removed", removed), ("changed", changed)] {
        if !keys.is_empty() {
            parts.push(format!("{label}: {}", keys.join(", ")));
        }
    }
    parts.join("; ")
}
