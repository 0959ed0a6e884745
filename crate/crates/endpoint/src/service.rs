use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use ssgov_core::attest::{
    AttestError, Envelope, KeyStore, NonceRegistry, Receipt, ReceiptBundle, ResponseEnvelope, ResponseStatus,
    SigningIdentity,
};
use ssgov_core::calculus::{evaluate_or_deny, DecisionError, EvalContext, FrameError, FrameSet, LegalFrame};
use ssgov_core::canonical::{self, Digest};
use ssgov_core::clock::Clock;
use ssgov_core::command::{
    gate_and_execute, parse, receipt_id_for, store_error_code, AuditEntry, AuditLog, Authority, GateContext, Outcome,
};
use ssgov_core::notify::{ChangeNotice, CycleEnv, Notifier, NotifyError};
use ssgov_core::protocol::{
    codes, paths, AdminAction, AdminReply, CommandReply, DecideReply, DecideRequest, Gazette, NoticesReply,
    NoticesRequest, SubscribeReply, SubscribeRequest,
};
use ssgov_core::store::{Store, StoreError, StoreOptions, WriteEvent};
use thiserror::Error;

use crate::config::Config;
use crate::gazette;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Attest(#[from] AttestError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Notify(#[from] NotifyError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Setup(String),
}

/// HTTP status and canonical body of one answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

/// A stage failure, answered in a signed error envelope.
struct Refusal {
    code: &'static str,
    message: String,
}

impl Refusal {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Refusal {
            code,
            message: message.into(),
        }
    }
}

impl From<AttestError> for Refusal {
    fn from(e: AttestError) -> Self {
        let code = match e.code() {
            "MALFORMED_ENVELOPE" => codes::MALFORMED_ENVELOPE,
            "REPLAYED_NONCE" => codes::REPLAYED_NONCE,
            "STALE_ENVELOPE" => codes::STALE_ENVELOPE,
            "INTERNAL" => codes::INTERNAL,
            _ => codes::AUTH_FAIL,
        };
        Refusal::new(code, e.to_string())
    }
}

/// The governance service: a request in, exactly one signed answer out.
///
/// Stages run in a fixed order: envelope decoding, authentication,
/// endpoint binding, replay window, syntax, gate, execution. The first
/// failing stage determines the error code.
pub struct Service {
    config: Config,
    clock: Arc<dyn Clock>,
    store: Store,
    audit: AuditLog,
    frames: RwLock<Arc<FrameSet>>,
    keys: KeyStore,
    nonces: NonceRegistry,
    notifier: Notifier,
    server: SigningIdentity,
    receipts: Mutex<File>,
}

impl Service {
    pub fn open(config: Config, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let data = &config.data_dir;
        fs::create_dir_all(data)?;
        let store = Store::open(
            data.join("store"),
            StoreOptions {
                fsync: config.fsync,
                ..StoreOptions::default()
            },
        )?;
        let audit = AuditLog::open(data.join("audit.ndjson"))?;
        let keys = KeyStore::open_dir(&config.key_dir)?;
        let server = SigningIdentity::load(&config.server_key)?;
        match keys.get(&server.record.key_id) {
            None => keys.register(server.record.clone())?,
            Some(r) if r == server.record => {}
            Some(_) => {
                return Err(ServiceError::Setup(format!(
                    "key dir holds a different record for server key {}",
                    server.record.key_id
                )))
            }
        }
        let frames = load_frame_dir(config.frame_dir.as_ref())?;
        let nonces = NonceRegistry::open(data.join("nonces.ndjson"))?;
        let notifier = Notifier::open(data.join("notify"), server.record.key_id.clone(), server.key.clone())?;
        let receipts = OpenOptions::new()
            .create(true)
            .append(true)
            .open(data.join("receipts.ndjson"))?;
        tracing::info!(
            seq = store.latest_seq(),
            frames = ?frames.versions(),
            keys = keys.records().len(),
            "service opened"
        );
        Ok(Service {
            config,
            clock,
            store,
            audit,
            frames: RwLock::new(Arc::new(frames)),
            keys,
            nonces,
            notifier,
            server,
            receipts: Mutex::new(receipts),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn server_key_id(&self) -> &str {
        &self.server.record.key_id
    }

    pub fn keys(&self) -> &KeyStore {
        &self.keys
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn frames(&self) -> Arc<FrameSet> {
        self.frames.read().expect("frame lock poisoned").clone()
    }

    pub fn gazette(&self) -> Gazette {
        gazette::build(&self.config, &self.store.events(), &self.frames(), &self.server.record)
    }

    /// Runs one notification cycle at the service clock.
    pub fn run_cycle(&self) -> Result<Vec<ChangeNotice>, NotifyError> {
        let frames = self.frames();
        let tags_at = |t: DateTime<Utc>| self.config.tags_at(t);
        let env = CycleEnv {
            frames: frames.as_slice(),
            store: &self.store,
            tags_at: &tags_at,
        };
        let notices = self.notifier.run_cycle(&env, self.clock.now())?;
        for n in &notices {
            tracing::info!(notice_id = %n.notice_id, owner = %n.owner, kind = ?n.kind, delta = %n.delta, "notice");
        }
        Ok(notices)
    }

    /// Signed protocol error for failures outside [`Service::handle`],
    /// such as oversized bodies or a crashed handler.
    pub fn protocol_error(&self, http: u16, code: &str, message: &str, endpoint: &str) -> Reply {
        self.reply(http, ResponseEnvelope::error(endpoint, None, self.clock.now(), code, message))
    }

    fn reply(&self, status: u16, response: ResponseEnvelope) -> Reply {
        let signed = response.sign(&self.server.record.key_id, &self.server.key);
        Reply {
            status,
            body: signed.canonical_bytes(),
        }
    }

    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> Reply {
        let now = self.clock.now();
        let known = paths::SIGNED.contains(&path) || path == paths::GAZETTE || path == paths::HEALTH;
        if !known {
            return self.reply(404, ResponseEnvelope::error(path, None, now, "NOT_FOUND", "no such endpoint"));
        }
        let expected = if paths::SIGNED.contains(&path) { "POST" } else { "GET" };
        if method != expected {
            let msg = format!("{path} accepts {expected} only");
            return self.reply(405, ResponseEnvelope::error(path, None, now, "METHOD_NOT_ALLOWED", &msg));
        }
        match path {
            paths::GAZETTE => {
                let body = serde_json::to_value(self.gazette()).expect("gazette serializes");
                self.reply(200, ResponseEnvelope::ok(path, None, now, body))
            }
            paths::HEALTH => {
                let body = serde_json::json!({ "status": "ok", "seq": self.store.latest_seq() });
                self.reply(200, ResponseEnvelope::ok(path, None, now, body))
            }
            _ => self.handle_signed(path, body, now),
        }
    }

    fn handle_signed(&self, path: &str, body: &[u8], now: DateTime<Utc>) -> Reply {
        let envelope = match Envelope::from_json(body) {
            Ok(e) => e,
            Err(e) => {
                tracing::warn!(path, error = %e, "malformed envelope");
                return self.reply(
                    400,
                    ResponseEnvelope::error(path, None, now, codes::MALFORMED_ENVELOPE, &e.to_string()),
                );
            }
        };
        let digest = envelope.digest();
        let outcome = self.admit(&envelope, path, now).and_then(|()| match path {
            paths::COMMAND => self.command(&envelope, digest, now),
            paths::DECIDE => self.decide(&envelope, digest, now),
            paths::SUBSCRIBE => self.subscribe(&envelope, now),
            paths::NOTICES => self.notices(&envelope),
            paths::ADMIN => self.admin(&envelope, digest, now),
            _ => unreachable!("checked by handle"),
        });
        match outcome {
            Ok(response) => self.reply(200, response),
            Err(r) => {
                tracing::info!(path, requester = %envelope.requester, code = r.code, "refused");
                self.reply(200, ResponseEnvelope::error(path, Some(digest), now, r.code, &r.message))
            }
        }
    }

    /// Authentication, endpoint binding and replay protection.
    fn admit(&self, envelope: &Envelope, path: &str, now: DateTime<Utc>) -> Result<(), Refusal> {
        envelope.verify(&self.keys)?;
        if envelope.endpoint != path {
            return Err(Refusal::new(
                codes::ENDPOINT_MISMATCH,
                format!("envelope is addressed to {}", envelope.endpoint),
            ));
        }
        self.nonces
            .check_and_insert(&envelope.requester, &envelope.nonce, envelope.at, now)?;
        Ok(())
    }

    fn command(&self, envelope: &Envelope, digest: Digest, now: DateTime<Utc>) -> Result<ResponseEnvelope, Refusal> {
        let ast = parse(&envelope.command_text).map_err(|e| Refusal::new(e.code(), e.to_string()))?;
        let frames = self.frames();
        let ctx = GateContext {
            time: Some(now),
            jurisdiction_tags: self.config.tags_at(now),
            params: Default::default(),
            envelope_digest: Some(digest),
        };
        let result = gate_and_execute(&ast, &envelope.requester, frames.as_slice(), &self.store, &self.audit, &ctx);
        let receipt = self.issue(&result.receipt_id, result.request_digest, Some(envelope), &result.decision, result.event(), now);

        let (rows, event, failure) = match result.outcome {
            Outcome::Rows(rows) => (Some(rows), None, None),
            Outcome::Written(ev) => (None, Some(ev), None),
            Outcome::Denied => (None, None, None),
            Outcome::Failed { code, message } => (None, None, Some(DecisionError { code, message })),
        };
        let reply = CommandReply {
            permit: result.decision.permit,
            missing_atoms: result.decision.missing_names(),
            receipt,
            decision: result.decision,
            rows,
            event,
            failure,
        };
        Ok(match &reply.failure {
            None => ResponseEnvelope::ok(paths::COMMAND, Some(digest), now, to_value(&reply)),
            Some(f) => ResponseEnvelope {
                status: ResponseStatus::Error,
                code: Some(f.code.clone()),
                ..ResponseEnvelope::ok(paths::COMMAND, Some(digest), now, to_value(&reply))
            },
        })
    }

    fn decide(&self, envelope: &Envelope, digest: Digest, now: DateTime<Utc>) -> Result<ResponseEnvelope, Refusal> {
        let req: DecideRequest = body_of(envelope)?;
        if req.subject.as_ref().is_some_and(|s| s != &envelope.requester) {
            return Err(Refusal::new(
                codes::BAD_REQUEST,
                "decide answers only for the requester's own requests",
            ));
        }
        let at = req.at.unwrap_or(now);
        let mut ctx = EvalContext::new(at, self.config.tags_at(at), req.request_kind);
        ctx.params = req.params;
        let decision = evaluate_or_deny(self.frames().as_slice(), &self.store.view(), envelope.requester.as_str(), &ctx);
        let receipt_id = receipt_id_for(&digest);
        self.audit_append(AuditEntry {
            receipt_id: receipt_id.clone(),
            at: now,
            requester: envelope.requester.clone(),
            request_digest: digest,
            authority: Authority::Gate {
                request_kind: ctx.request_kind.clone(),
                permit: decision.permit,
                decision_digest: decision.digest(),
                missing: decision.missing_names(),
                error: decision.error.as_ref().map(|e| e.code.clone()),
            },
            event_seq: None,
        })?;
        let receipt = self.issue(&receipt_id, digest, Some(envelope), &decision, None, now);
        let reply = DecideReply {
            permit: decision.permit,
            missing_atoms: decision.missing_names(),
            receipt,
            decision,
        };
        Ok(ResponseEnvelope::ok(paths::DECIDE, Some(digest), now, to_value(&reply)))
    }

    fn subscribe(&self, envelope: &Envelope, now: DateTime<Utc>) -> Result<ResponseEnvelope, Refusal> {
        let req: SubscribeRequest = body_of(envelope)?;
        let frames = self.frames();
        let tags_at = |t: DateTime<Utc>| self.config.tags_at(t);
        let env = CycleEnv {
            frames: frames.as_slice(),
            store: &self.store,
            tags_at: &tags_at,
        };
        let interval = req.interval_secs.or(self.config.notify.default_interval_secs);
        let sub_id = self
            .notifier
            .subscribe(envelope.requester.clone(), req.payload, interval, &env, now)
            .map_err(|e| Refusal::new(notify_code(&e), e.to_string()))?;
        Ok(ResponseEnvelope::ok(
            paths::SUBSCRIBE,
            Some(envelope.digest()),
            now,
            to_value(&SubscribeReply { sub_id }),
        ))
    }

    fn notices(&self, envelope: &Envelope) -> Result<ResponseEnvelope, Refusal> {
        let req: NoticesRequest = body_of(envelope)?;
        let mut notices = self.notifier.notices_for(&envelope.requester);
        if let Some(after) = &req.after {
            match notices.iter().position(|n| &n.notice_id == after) {
                Some(i) => {
                    notices.drain(..=i);
                }
                None => return Err(Refusal::new(codes::BAD_REQUEST, format!("unknown notice {after}"))),
            }
        }
        Ok(ResponseEnvelope::ok(
            paths::NOTICES,
            Some(envelope.digest()),
            self.clock.now(),
            to_value(&NoticesReply { notices }),
        ))
    }

    fn admin(&self, envelope: &Envelope, digest: Digest, now: DateTime<Utc>) -> Result<ResponseEnvelope, Refusal> {
        if !self.config.officials.contains(&envelope.requester) {
            return Err(Refusal::new(
                codes::NOT_AN_OFFICIAL,
                format!("{} may not perform administrative actions", envelope.requester),
            ));
        }
        let action: AdminAction = body_of(envelope)?;
        let receipt_id = receipt_id_for(&digest);
        let (label, event) = match action {
            AdminAction::DefineRegistry { schema } => {
                let label = format!("define_registry {}", schema.registry_id);
                let ev = self
                    .store
                    .define_registry(schema, envelope.requester.clone(), receipt_id.clone(), now)
                    .map_err(|e| Refusal::new(store_error_code(&e), e.to_string()))?;
                (label, Some(ev))
            }
            AdminAction::LoadFrame { frame } => {
                let frame = self.load_frame(frame)?;
                (format!("load_frame {}@{}", frame.frame_id, frame.version), None)
            }
            AdminAction::RegisterKey { record } => {
                let label = format!("register_key {} for {}", record.key_id, record.owner);
                self.keys
                    .register(record)
                    .map_err(|e| Refusal::new("KEY_REJECTED", e.to_string()))?;
                (label, None)
            }
        };
        self.audit_append(AuditEntry {
            receipt_id: receipt_id.clone(),
            at: now,
            requester: envelope.requester.clone(),
            request_digest: digest,
            authority: Authority::Admin { action: label.clone() },
            event_seq: event.as_ref().map(|e| e.seq),
        })?;
        tracing::info!(requester = %envelope.requester, action = %label, "admin action");
        let reply = AdminReply {
            receipt_id,
            detail: label,
            event,
        };
        Ok(ResponseEnvelope::ok(paths::ADMIN, Some(digest), now, to_value(&reply)))
    }

    fn load_frame(&self, doc: Value) -> Result<LegalFrame, Refusal> {
        let reject = |e: FrameError| Refusal::new("FRAME_REJECTED", e.to_string());
        let bytes = canonical::canonical_value_bytes(&doc).map_err(|e| Refusal::new(codes::BAD_REQUEST, e.to_string()))?;
        let frame = LegalFrame::from_json(&bytes).map_err(reject)?;
        frame.check_against(&self.store.view()).map_err(reject)?;
        let mut guard = self.frames.write().expect("frame lock poisoned");
        let mut next = FrameSet::clone(&guard);
        next.load(frame.clone()).map_err(reject)?;
        if let Some(dir) = &self.config.frame_dir {
            fs::create_dir_all(dir).and_then(|()| {
                fs::write(
                    dir.join(format!("{}-v{}.json", frame.frame_id, frame.version)),
                    frame.canonical_bytes(),
                )
            })
            .map_err(|e| Refusal::new(codes::INTERNAL, e.to_string()))?;
        }
        *guard = Arc::new(next);
        Ok(frame)
    }

    fn issue(
        &self,
        receipt_id: &str,
        request_digest: Digest,
        envelope: Option<&Envelope>,
        decision: &ssgov_core::calculus::Decision,
        event: Option<&WriteEvent>,
        now: DateTime<Utc>,
    ) -> Receipt {
        let receipt = Receipt::issue(
            receipt_id,
            request_digest,
            envelope,
            decision,
            event,
            now,
            &self.server.record.key_id,
            &self.server.key,
        );
        let bundle = ReceiptBundle {
            receipt: receipt.clone(),
            decision: decision.clone(),
            envelope: envelope.cloned(),
            event: event.cloned(),
        };
        let mut line = canonical::to_canonical_bytes(&bundle).expect("receipts contain no floats");
        line.push(b'\n');
        if let Err(e) = self.receipts.lock().expect("receipt log poisoned").write_all(&line) {
            tracing::error!(error = %e, receipt_id, "receipt log append failed");
        }
        receipt
    }

    fn audit_append(&self, entry: AuditEntry) -> Result<(), Refusal> {
        self.audit
            .append(entry)
            .map_err(|e| Refusal::new(codes::INTERNAL, format!("audit log: {e}")))
    }

    pub fn max_body_bytes(&self) -> usize {
        self.config.max_body_bytes
    }

}

fn load_frame_dir(dir: Option<&PathBuf>) -> Result<FrameSet, ServiceError> {
    let mut frames = Vec::new();
    if let Some(dir) = dir {
        if dir.exists() {
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let frame = LegalFrame::from_json(&fs::read(&path)?)
                        .map_err(|e| ServiceError::Setup(format!("{}: {e}", path.display())))?;
                    frames.push(frame);
                }
            }
        }
    }
    frames.sort_by(|a, b| (&a.frame_id, a.version).cmp(&(&b.frame_id, b.version)));
    let mut set = FrameSet::new();
    for f in frames {
        set.load(f)?;
    }
    Ok(set)
}

fn body_of<T: DeserializeOwned>(envelope: &Envelope) -> Result<T, Refusal> {
    serde_json::from_str(&envelope.command_text).map_err(|e| Refusal::new(codes::BAD_REQUEST, e.to_string()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("replies serialize")
}

fn notify_code(e: &NotifyError) -> &'static str {
    match e {
        NotifyError::DeniedPayload(_) => codes::DENIED_PAYLOAD,
        NotifyError::Io(_) => codes::INTERNAL,
        other => other.code(),
    }
}
