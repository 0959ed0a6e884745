//! Event-sourced registry storage.
//!
//! Every change is an event appended to a hash-chained log; reads go
//! through immutable [`StoreView`]s. Writes are serialized store-wide by a
//! single writer lock, while views can be read concurrently.

mod event;
mod query;
mod schema;
mod view;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use event::{EventKind, WriteEvent};
pub use query::query;
pub use schema::{FieldDef, RegistrySchema, ScalarType};
pub use view::{Registry, StoreView};

use crate::calculus::EvalError;
use crate::canonical::{self, Digest};
use crate::scalar::{NationalId, Values};

/// In-memory checkpoint interval for `as_of`.
const CHECKPOINT_EVERY: u64 = 128;

const LOG_FILE: &str = "events.ndjson";
const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("gap in event log: expected seq {expected}, found {found}")]
    GapDetected { expected: u64, found: u64 },
    #[error("hash chain broken at seq {seq}")]
    DigestMismatch { seq: u64 },
    #[error("event {seq} is inconsistent with prior state: {reason}")]
    Inconsistent { seq: u64, reason: String },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("registry {0} is already defined")]
    DuplicateRegistry(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown registry {0}")]
    UnknownRegistry(String),
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("no record {key} in {registry}")]
    UnknownKey { registry: String, key: String },
    #[error("record {key} already exists in {registry}")]
    DuplicateKey { registry: String, key: String },
    #[error("record {key} in {registry} changed since it was read")]
    StaleBefore { registry: String, key: String },
    #[error("seq {requested} is beyond the latest seq {latest}")]
    FutureSeq { requested: u64, latest: u64 },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("selection failed: {0}")]
    Selection(#[from] EvalError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// A change to apply. `Define` carries the schema; data operations are
/// validated against the registry's schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOp {
    Define(RegistrySchema),
    Insert(Values),
    Update { key: String, set: Values },
    Delete { key: String },
}

#[derive(Debug, Clone)]
pub struct WriteRequest {
    pub registry: String,
    pub op: WriteOp,
    pub requester: NationalId,
    pub receipt_id: String,
    pub command_digest: Digest,
    pub at: DateTime<Utc>,
    /// Optimistic concurrency: when set, the current record (or its
    /// absence) must equal this, else `StaleBefore`.
    pub expected_before: Option<Option<Values>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsOf {
    Seq(u64),
    Instant(DateTime<Utc>),
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// Write a snapshot file every this many events (0 disables).
    pub snapshot_every: u64,
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            snapshot_every: 256,
            fsync: false,
        }
    }
}

struct Writer {
    log: Option<File>,
    last_hash: Digest,
    last_at: Option<DateTime<Utc>>,
}

#[derive(Default)]
struct History {
    events: Vec<WriteEvent>,
    /// `checkpoints[i]` is the view at seq `i * CHECKPOINT_EVERY`.
    checkpoints: Vec<StoreView>,
}

impl History {
    fn push(&mut self, ev: WriteEvent, view: &StoreView) {
        self.events.push(ev);
        if view.seq().is_multiple_of(CHECKPOINT_EVERY) {
            self.checkpoints.push(view.clone());
        }
    }
}

pub struct Store {
    dir: Option<PathBuf>,
    opts: StoreOptions,
    writer: Mutex<Writer>,
    current: RwLock<StoreView>,
    history: RwLock<History>,
}

/// Rebuilds a view from a complete log, verifying seq continuity, the hash
/// chain and before-images.
pub fn replay(events: &[WriteEvent]) -> Result<StoreView, ReplayError> {
    replay_into(events, |_, _| {})
}

fn replay_into(
    events: &[WriteEvent],
    mut on_event: impl FnMut(&WriteEvent, &StoreView),
) -> Result<StoreView, ReplayError> {
    let mut view = StoreView::empty();
    let mut prev = Digest::ZERO;
    for ev in events {
        let expected = view.seq() + 1;
        if ev.seq != expected {
            return Err(ReplayError::GapDetected {
                expected,
                found: ev.seq,
            });
        }
        if ev.prev_hash != prev {
            return Err(ReplayError::DigestMismatch { seq: ev.seq });
        }
        view = view.apply(ev).map_err(|reason| ReplayError::Inconsistent {
            seq: ev.seq,
            reason,
        })?;
        prev = ev.hash();
        on_event(ev, &view);
    }
    Ok(view)
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            dir: None,
            opts: StoreOptions::default(),
            writer: Mutex::new(Writer {
                log: None,
                last_hash: Digest::ZERO,
                last_at: None,
            }),
            current: RwLock::new(StoreView::empty()),
            history: RwLock::new(History {
                events: Vec::new(),
                checkpoints: vec![StoreView::empty()],
            }),
        }
    }

    /// Opens (or creates) a store directory, replaying and verifying the
    /// event log and any snapshot files.
    pub fn open(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
        let log_path = dir.join(LOG_FILE);

        let mut events = Vec::new();
        if log_path.exists() {
            for (n, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                canonical::parse_canonical(line.as_bytes())
                    .map_err(|_| StoreError::Corrupt(format!("log line {} is not canonical", n + 1)))?;
                let ev: WriteEvent = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt(format!("log line {}: {e}", n + 1)))?;
                events.push(ev);
            }
        }

        let mut history = History {
            events: Vec::with_capacity(events.len()),
            checkpoints: vec![StoreView::empty()],
        };
        let view = replay_into(&events, |ev, v| history.push(ev.clone(), v))?;
        let writer = Writer {
            log: Some(OpenOptions::new().create(true).append(true).open(&log_path)?),
            last_hash: events.last().map(WriteEvent::hash).unwrap_or(Digest::ZERO),
            last_at: events.last().map(|e| e.at),
        };
        let store = Store {
            dir: Some(dir),
            opts,
            writer: Mutex::new(writer),
            current: RwLock::new(view),
            history: RwLock::new(history),
        };
        store.verify_snapshots()?;
        tracing::info!(seq = store.latest_seq(), "store opened");
        Ok(store)
    }

    fn verify_snapshots(&self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        for entry in fs::read_dir(dir.join(SNAPSHOT_DIR))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let seq: u64 = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| StoreError::Corrupt(format!("bad snapshot name {}", path.display())))?;
            let bytes = fs::read(&path)?;
            let recorded = fs::read_to_string(path.with_extension("sha256"))?;
            let digest = Digest::of(&bytes);
            if recorded.trim() != digest.to_hex() || self.as_of(AsOf::Seq(seq))?.digest() != digest {
                return Err(ReplayError::DigestMismatch { seq }.into());
            }
        }
        Ok(())
    }

    /// The latest view.
    pub fn view(&self) -> StoreView {
        self.current.read().expect("view lock poisoned").clone()
    }

    pub fn latest_seq(&self) -> u64 {
        self.view().seq()
    }

    pub fn digest(&self) -> Digest {
        self.view().digest()
    }

    /// A copy of the full event log.
    pub fn events(&self) -> Vec<WriteEvent> {
        self.history.read().expect("history lock poisoned").events.clone()
    }

    pub fn event(&self, seq: u64) -> Option<WriteEvent> {
        let h = self.history.read().expect("history lock poisoned");
        seq.checked_sub(1).and_then(|i| h.events.get(i as usize)).cloned()
    }

    /// The view after every event with seq ≤ `n`, or with `at` ≤ the
    /// given instant.
    pub fn as_of(&self, target: AsOf) -> Result<StoreView, StoreError> {
        let h = self.history.read().expect("history lock poisoned");
        let latest = h.events.len() as u64;
        let seq = match target {
            AsOf::Seq(n) if n > latest => {
                return Err(StoreError::FutureSeq {
                    requested: n,
                    latest,
                })
            }
            AsOf::Seq(n) => n,
            AsOf::Instant(t) => h.events.partition_point(|e| e.at <= t) as u64,
        };
        let cp = ((seq / CHECKPOINT_EVERY) as usize).min(h.checkpoints.len() - 1);
        let mut view = h.checkpoints[cp].clone();
        for ev in &h.events[view.seq() as usize..seq as usize] {
            view = view.apply(ev).map_err(|reason| ReplayError::Inconsistent {
                seq: ev.seq,
                reason,
            })?;
        }
        Ok(view)
    }

    /// Takes the single writer lock. Decisions made against
    /// [`WriteGuard::view`] stay valid until the guard is dropped.
    pub fn lock_writer(&self) -> WriteGuard<'_> {
        WriteGuard {
            store: self,
            writer: self.writer.lock().expect("writer lock poisoned"),
        }
    }

    pub fn apply_write(&self, req: WriteRequest) -> Result<WriteEvent, StoreError> {
        self.lock_writer().apply(req)
    }

    pub fn define_registry(
        &self,
        schema: RegistrySchema,
        requester: NationalId,
        receipt_id: impl Into<String>,
        at: DateTime<Utc>,
    ) -> Result<WriteEvent, StoreError> {
        let command_digest = canonical::canonical_digest(&schema).expect("schemas contain no floats");
        self.apply_write(WriteRequest {
            registry: schema.registry_id.clone(),
            op: WriteOp::Define(schema),
            requester,
            receipt_id: receipt_id.into(),
            command_digest,
            at,
            expected_before: None,
        })
    }

    fn write_snapshot(&self, view: &StoreView) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let base = dir.join(SNAPSHOT_DIR).join(format!("{:012}", view.seq()));
        let bytes = view.canonical_dump();
        let tmp = base.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::write(base.with_extension("sha256"), format!("{}\n", Digest::of(&bytes)))?;
        fs::rename(tmp, base.with_extension("json"))?;
        Ok(())
    }
}

pub struct WriteGuard<'s> {
    store: &'s Store,
    writer: MutexGuard<'s, Writer>,
}

impl WriteGuard<'_> {
    pub fn view(&self) -> StoreView {
        self.store.view()
    }

    /// Validates the request against the current view, appends the event
    /// and publishes the new view.
    pub fn apply(&mut self, req: WriteRequest) -> Result<WriteEvent, StoreError> {
        let view = self.view();
        let at = match self.writer.last_at {
            Some(last) if last > req.at => last,
            _ => req.at,
        };
        let ev = build_event(&view, req, at, self.writer.last_hash)?;
        let next = view.apply(&ev).map_err(|reason| ReplayError::Inconsistent {
            seq: ev.seq,
            reason,
        })?;

        let line = ev.canonical_bytes();
        if let Some(log) = self.writer.log.as_mut() {
            let mut buf = line.clone();
            buf.push(b'\n');
            log.write_all(&buf)?;
            if self.store.opts.fsync {
                log.sync_data()?;
            }
        }
        self.writer.last_hash = Digest::of(&line);
        self.writer.last_at = Some(at);
        self.store
            .history
            .write()
            .expect("history lock poisoned")
            .push(ev.clone(), &next);
        *self.store.current.write().expect("view lock poisoned") = next.clone();

        let every = self.store.opts.snapshot_every;
        if every > 0 && next.seq() % every == 0 {
            if let Err(e) = self.store.write_snapshot(&next) {
                tracing::warn!(seq = next.seq(), error = %e, "snapshot failed");
            }
        }
        Ok(ev)
    }
}

fn build_event(
    view: &StoreView,
    req: WriteRequest,
    at: DateTime<Utc>,
    prev_hash: Digest,
) -> Result<WriteEvent, StoreError> {
    let mut ev = WriteEvent {
        seq: view.seq() + 1,
        at,
        kind: EventKind::Define,
        registry_id: req.registry.clone(),
        key: None,
        schema: None,
        before: None,
        after: None,
        requester: req.requester,
        receipt_id: req.receipt_id,
        command_digest: req.command_digest,
        prev_hash,
    };
    if let WriteOp::Define(schema) = req.op {
        if schema.registry_id != req.registry {
            return Err(StoreError::InvalidSchema("registry id mismatch".into()));
        }
        schema.validate().map_err(StoreError::InvalidSchema)?;
        if view.registry(&req.registry).is_some() {
            return Err(StoreError::DuplicateRegistry(req.registry));
        }
        ev.schema = Some(schema);
        return Ok(ev);
    }

    let reg = view
        .registry(&req.registry)
        .ok_or_else(|| StoreError::UnknownRegistry(req.registry.clone()))?;
    let schema = &reg.schema;
    let check_fields = |values: &Values| match values.keys().find(|k| schema.field(k).is_none()) {
        Some(k) => Err(StoreError::UnknownField(format!("{}.{k}", schema.registry_id))),
        None => Ok(()),
    };
    let unknown_key = |key: &str| StoreError::UnknownKey {
        registry: req.registry.clone(),
        key: key.to_string(),
    };

    let (key, before, after) = match req.op {
        WriteOp::Define(_) => unreachable!(),
        WriteOp::Insert(values) => {
            check_fields(&values)?;
            let after = schema.conform(&values).map_err(StoreError::SchemaViolation)?;
            let key = schema
                .key_of(&after)
                .ok_or_else(|| StoreError::SchemaViolation("key field must be a string".into()))?;
            if reg.rows.contains_key(&key) {
                return Err(StoreError::DuplicateKey {
                    registry: req.registry.clone(),
                    key,
                });
            }
            ev.kind = EventKind::Insert;
            (key, None, Some(after))
        }
        WriteOp::Update { key, set } => {
            check_fields(&set)?;
            let before = reg.rows.get(&key).ok_or_else(|| unknown_key(&key))?;
            let mut merged = before.clone();
            merged.extend(set);
            let after = schema.conform(&merged).map_err(StoreError::SchemaViolation)?;
            if schema.key_of(&after).as_deref() != Some(key.as_str()) {
                return Err(StoreError::SchemaViolation("the key field is immutable".into()));
            }
            ev.kind = EventKind::Update;
            (key, Some(before.clone()), Some(after))
        }
        WriteOp::Delete { key } => {
            let before = reg.rows.get(&key).ok_or_else(|| unknown_key(&key))?;
            ev.kind = EventKind::Delete;
            (key, Some(before.clone()), None)
        }
    };
    if let Some(expected) = &req.expected_before {
        if expected.as_ref() != reg.rows.get(&key) {
            return Err(StoreError::StaleBefore {
                registry: req.registry,
                key,
            });
        }
    }
    ev.key = Some(key);
    ev.before = before;
    ev.after = after;
    Ok(ev)
}
