use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Timelike, Utc};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::Value;
use ssgov_core::attest::{verify_bundle, Envelope, KeyStore, ReceiptBundle, ResponseEnvelope, ResponseStatus, SigningIdentity};
use ssgov_core::calculus::RequestKind;
use ssgov_core::canonical::{self, rfc3339};
use ssgov_core::notify::Payload;
use ssgov_core::protocol::{
    paths, AdminAction, AdminReply, CommandReply, DecideReply, DecideRequest, Gazette, NoticesReply, NoticesRequest,
    SubscribeReply, SubscribeRequest,
};
use ssgov_core::scalar::{NationalId, Scalar};
use ssgov_core::store::RegistrySchema;

use govctl::args::{parse_param, parse_when, VOYAGE_START};
use govctl::client::{sign_envelope, Client, Exchange};
use govctl::config::{CliConfig, OutputMode};
use govctl::{exit, render};

#[derive(Parser)]
#[command(name = "govctl", version, about = "Client for the self-service governance endpoint")]
#[command(after_help = "Exit codes: 0 success, 2 legal deny, 1 transport or protocol error, 64 usage error.")]
struct Cli {
    /// Client config file (TOML: server, identity, output, keys).
    #[arg(long, env = "GOVCTL_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Endpoint base URL.
    #[arg(long, env = "GOVCTL_SERVER", global = true)]
    server: Option<String>,
    /// Signing key, `<key_id>.key.pem`.
    #[arg(long, env = "GOVCTL_IDENTITY", global = true)]
    identity: Option<PathBuf>,
    /// Directory of public key records for checking signatures.
    #[arg(long, env = "GOVCTL_KEYS", global = true)]
    keys: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    output: Option<OutputMode>,
    /// Date envelopes at this RFC 3339 instant instead of now.
    #[arg(long, global = true)]
    timestamp: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a signing key and its public record.
    Keygen {
        #[arg(long)]
        owner: String,
        #[arg(long)]
        key_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// RFC 3339 start of validity (default: now).
        #[arg(long)]
        valid_from: Option<String>,
        /// Also register the public record, signed by the configured
        /// (official) identity.
        #[arg(long)]
        register: bool,
    },
    /// Load a legal frame document (officials only).
    LoadFrame { file: PathBuf },
    /// Define a registry from a schema document (officials only).
    DefineRegistry { file: PathBuf },
    /// Submit a command from a file (`-` for stdin), inline text, or a
    /// prepared signed envelope.
    Submit {
        #[arg(required_unless_present_any = ["text", "envelope"])]
        file: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["file", "envelope"])]
        text: Option<String>,
        #[arg(long, conflicts_with = "file")]
        envelope: Option<PathBuf>,
        /// Write the receipt bundle (receipt, decision, envelope, event).
        #[arg(long)]
        receipt_out: Option<PathBuf>,
    },
    /// Ask for a decision on one of your own requests.
    Decide {
        #[arg(long)]
        request: String,
        /// Must be the identity's owner; checked by the server.
        #[arg(long)]
        subject: Option<String>,
        /// `dayN`, `YYYY-MM-DD` or RFC 3339 (default: server time).
        #[arg(long)]
        at: Option<String>,
        #[arg(long, default_value = VOYAGE_START)]
        voyage_start: NaiveDate,
        /// Companion national id, or `none`.
        #[arg(long)]
        companion: Option<String>,
        /// Extra context parameter, `key=value`.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, Scalar)>,
        #[arg(long)]
        receipt_out: Option<PathBuf>,
    },
    /// Verify a receipt bundle or a signed response offline.
    ReceiptVerify { file: PathBuf },
    /// Show the published gazette.
    Gazette,
    /// Subscribe to changes (with --query or --request), or list notices.
    Watch {
        #[arg(long, conflicts_with = "request")]
        query: Option<String>,
        #[arg(long)]
        request: Option<String>,
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, Scalar)>,
        /// Seconds between checks.
        #[arg(long)]
        interval: Option<u64>,
        /// List only notices after this notice id.
        #[arg(long)]
        after: Option<String>,
        /// Keep polling every N seconds.
        #[arg(long)]
        follow: Option<u64>,
    },
}

enum Failure {
    Usage(String),
    Error(String),
}

type Outcome = Result<u8, Failure>;

fn err(e: impl std::fmt::Display) -> Failure {
    Failure::Error(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("govctl: {m}\n\nRun `govctl --help` for usage.");
            ExitCode::from(exit::USAGE)
        }
        Err(Failure::Error(m)) => {
            eprintln!("govctl: {m}");
            ExitCode::from(exit::ERROR)
        }
    }
}

struct Ctx {
    cfg: CliConfig,
    timestamp: Option<DateTime<Utc>>,
}

impl Ctx {
    fn output(&self) -> OutputMode {
        self.cfg.output()
    }

    fn client(&self) -> Result<Client, Failure> {
        Client::new(self.cfg.server(), self.cfg.keys.as_deref()).map_err(err)
    }

    fn identity(&self) -> Result<SigningIdentity, Failure> {
        let path = self
            .cfg
            .identity
            .as_ref()
            .ok_or_else(|| Failure::Usage("no identity: pass --identity or set it in the config".into()))?;
        SigningIdentity::load(path).map_err(|e| err(format!("{}: {e}", path.display())))
    }

    fn now(&self) -> DateTime<Utc> {
        self.timestamp.unwrap_or_else(|| {
            let t = Utc::now();
            t.with_nanosecond(0).unwrap_or(t)
        })
    }

    fn envelope(&self, endpoint: &str, text: String) -> Result<Envelope, Failure> {
        Ok(sign_envelope(&self.identity()?, endpoint, text, self.now()))
    }

    fn send(&self, envelope: &Envelope) -> Result<Exchange, Failure> {
        self.client()?.post_envelope(envelope).map_err(err)
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p).map_err(Failure::Usage)?,
        None => CliConfig::default(),
    };
    if cli.server.is_some() {
        cfg.server = cli.server;
    }
    if cli.identity.is_some() {
        cfg.identity = cli.identity;
    }
    if cli.keys.is_some() {
        cfg.keys = cli.keys;
    }
    if cli.output.is_some() {
        cfg.output = cli.output;
    }
    let timestamp = cli
        .timestamp
        .as_deref()
        .map(rfc3339::parse)
        .transpose()
        .map_err(Failure::Usage)?;
    let ctx = Ctx { cfg, timestamp };

    match cli.cmd {
        Cmd::Keygen {
            owner,
            key_id,
            out,
            valid_from,
            register,
        } => keygen(&ctx, &owner, key_id, &out, valid_from.as_deref(), register),
        Cmd::LoadFrame { file } => {
            let frame: Value = read_json(&file)?;
            admin(&ctx, AdminAction::LoadFrame { frame })
        }
        Cmd::DefineRegistry { file } => {
            let schema: RegistrySchema = read_json(&file)?;
            admin(&ctx, AdminAction::DefineRegistry { schema })
        }
        Cmd::Submit {
            file,
            text,
            envelope,
            receipt_out,
        } => {
            let envelope = match (envelope, text, file) {
                (Some(path), _, _) => Envelope::from_json(&read_bytes(&path)?).map_err(err)?,
                (None, Some(text), _) => ctx.envelope(paths::COMMAND, text)?,
                (None, None, Some(path)) => {
                    let text = String::from_utf8(read_bytes(&path)?).map_err(|_| err("command file is not UTF-8"))?;
                    ctx.envelope(paths::COMMAND, text.trim_end().to_string())?
                }
                (None, None, None) => return Err(Failure::Usage("nothing to submit".into())),
            };
            let ex = ctx.send(&envelope)?;
            if let Some(path) = receipt_out {
                save_bundle::<CommandReply>(&path, &ex, &envelope, |r| (r.receipt, r.decision, r.event))?;
            }
            report(&ctx, &ex, |body| {
                let r: CommandReply = serde_json::from_value(body.clone()).ok()?;
                let mut out = String::new();
                if let Some(rows) = &r.rows {
                    out.push_str(&render::rows(rows));
                }
                if let Some(ev) = &r.event {
                    let key = ev.key.as_deref().unwrap_or("-");
                    out.push_str(&format!("event {} appended: {:?} {} {key}\n", ev.seq, ev.kind, ev.registry_id));
                }
                if let Some(f) = &r.failure {
                    out.push_str(&format!("execution failed: {}: {}\n", f.code, f.message));
                }
                out.push_str(&render::decision(&r.decision));
                out.push_str(&format!("receipt {}\n", r.receipt.receipt_id));
                Some(out)
            })
        }
        Cmd::Decide {
            request,
            subject,
            at,
            voyage_start,
            companion,
            params,
            receipt_out,
        } => {
            let request_kind: RequestKind = request.parse().map_err(|e| Failure::Usage(format!("{e}")))?;
            let subject = subject
                .map(NationalId::new)
                .transpose()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let at = at
                .map(|s| parse_when(&s, voyage_start))
                .transpose()
                .map_err(Failure::Usage)?;
            let mut p: std::collections::BTreeMap<String, Scalar> = params.into_iter().collect();
            if let Some(c) = companion {
                p.insert("companion".into(), govctl::args::parse_value(&c));
            }
            let req = DecideRequest {
                subject,
                request_kind,
                params: p,
                at,
            };
            let envelope = ctx.envelope(paths::DECIDE, canonical_text(&req))?;
            let ex = ctx.send(&envelope)?;
            if let Some(path) = receipt_out {
                save_bundle::<DecideReply>(&path, &ex, &envelope, |r| (r.receipt, r.decision, None))?;
            }
            report(&ctx, &ex, |body| {
                let r: DecideReply = serde_json::from_value(body.clone()).ok()?;
                Some(format!("{}receipt {}\n", render::decision(&r.decision), r.receipt.receipt_id))
            })
        }
        Cmd::ReceiptVerify { file } => receipt_verify(&ctx, &file),
        Cmd::Gazette => {
            let ex = ctx.client()?.get(paths::GAZETTE).map_err(err)?;
            report(&ctx, &ex, |body| {
                let g: Gazette = serde_json::from_value(body.clone()).ok()?;
                Some(render::gazette(&g))
            })
        }
        Cmd::Watch {
            query,
            request,
            params,
            interval,
            after,
            follow,
        } => {
            let payload = match (query, request) {
                (Some(command), _) => Some(Payload::QueryDiff { command }),
                (None, Some(kind)) => Some(Payload::DecisionWatch {
                    request_kind: kind.parse().map_err(|e| Failure::Usage(format!("{e}")))?,
                    params: params.into_iter().collect(),
                }),
                (None, None) => None,
            };
            match payload {
                Some(payload) => {
                    let req = SubscribeRequest {
                        payload,
                        interval_secs: interval,
                    };
                    let ex = ctx.send(&ctx.envelope(paths::SUBSCRIBE, canonical_text(&req))?)?;
                    report(&ctx, &ex, |body| {
                        let r: SubscribeReply = serde_json::from_value(body.clone()).ok()?;
                        Some(format!("subscribed {}\n", r.sub_id))
                    })
                }
                None => watch_notices(&ctx, after, follow),
            }
        }
    }
}

fn keygen(
    ctx: &Ctx,
    owner: &str,
    key_id: Option<String>,
    out: &Path,
    valid_from: Option<&str>,
    register: bool,
) -> Outcome {
    let owner = NationalId::new(owner).map_err(|e| Failure::Usage(e.to_string()))?;
    let key_id = key_id.unwrap_or_else(|| format!("{}-1", owner.as_str().to_ascii_lowercase()));
    let valid_from = match valid_from {
        Some(s) => rfc3339::parse(s).map_err(Failure::Usage)?,
        None => ctx.now(),
    };
    let identity = SigningIdentity::generate(key_id, owner, valid_from);
    let path = identity.save(out).map_err(err)?;
    println!("private key {}", path.display());
    println!("public record {}", out.join(format!("{}.json", identity.record.key_id)).display());
    if register {
        return admin(ctx, AdminAction::RegisterKey { record: identity.record });
    }
    Ok(exit::OK)
}

fn admin(ctx: &Ctx, action: AdminAction) -> Outcome {
    let ex = ctx.send(&ctx.envelope(paths::ADMIN, canonical_text(&action))?)?;
    report(ctx, &ex, |body| {
        let r: AdminReply = serde_json::from_value(body.clone()).ok()?;
        let seq = r.event.map(|e| format!(", event {}", e.seq)).unwrap_or_default();
        Some(format!("ok: {} (receipt {}{seq})\n", r.detail, r.receipt_id))
    })
}

fn watch_notices(ctx: &Ctx, mut after: Option<String>, follow: Option<u64>) -> Outcome {
    loop {
        let req = NoticesRequest { after: after.clone() };
        let ex = ctx.send(&ctx.envelope(paths::NOTICES, canonical_text(&req))?)?;
        let code = report(ctx, &ex, |body| {
            let r: NoticesReply = serde_json::from_value(body.clone()).ok()?;
            Some(r.notices.iter().map(|n| render::notice(n) + "\n").collect())
        })?;
        let Some(secs) = follow else { return Ok(code) };
        if code != exit::OK {
            return Ok(code);
        }
        if let Ok(r) = serde_json::from_value::<NoticesReply>(ex.response.body.clone()) {
            if let Some(last) = r.notices.last() {
                after = Some(last.notice_id.clone());
            }
        }
        std::thread::sleep(Duration::from_secs(secs.max(1)));
    }
}

fn receipt_verify(ctx: &Ctx, file: &Path) -> Outcome {
    let dir = ctx
        .cfg
        .keys
        .as_ref()
        .ok_or_else(|| Failure::Usage("receipt-verify needs --keys (public key records)".into()))?;
    let keys = KeyStore::open_dir(dir).map_err(err)?;
    let bytes = read_bytes(file)?;
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| err(format!("not JSON: {e}")))?;
    let bundle = if value.get("status").is_some() {
        let resp = ResponseEnvelope::from_json(&bytes).map_err(err)?;
        resp.verify(&keys).map_err(err)?;
        let body = &resp.body;
        ReceiptBundle {
            receipt: field(body, "receipt")?,
            decision: field(body, "decision")?,
            envelope: None,
            event: body.get("event").map(|v| serde_json::from_value(v.clone())).transpose().map_err(err)?,
        }
    } else {
        serde_json::from_value(value).map_err(|e| err(format!("not a receipt bundle: {e}")))?
    };
    verify_bundle(&bundle, &keys).map_err(err)?;
    let r = &bundle.receipt;
    match ctx.output() {
        OutputMode::CanonicalJson => {
            let out = serde_json::json!({"valid": true, "receipt_id": r.receipt_id, "permit": r.permit});
            println!("{}", String::from_utf8_lossy(&canonical::canonical_value_bytes(&out).map_err(err)?));
        }
        OutputMode::Human => {
            let event = r.event_seq.map(|s| format!(", event {s}")).unwrap_or_default();
            println!(
                "receipt {} valid: permit={}, signed by {} at {}{event}",
                r.receipt_id,
                r.permit,
                r.server_key_id,
                rfc3339::format(&r.at)
            );
        }
    }
    Ok(exit::OK)
}

fn field<T: DeserializeOwned>(body: &Value, name: &str) -> Result<T, Failure> {
    let v = body.get(name).ok_or_else(|| err(format!("response has no {name}")))?;
    serde_json::from_value(v.clone()).map_err(err)
}

/// Prints a response and returns the exit code: 0 on success, 2 on a
/// legal deny, 1 on an error response.
fn report(ctx: &Ctx, ex: &Exchange, human: impl Fn(&Value) -> Option<String>) -> Outcome {
    let resp = &ex.response;
    let code = match resp.status {
        ResponseStatus::Error => exit::ERROR,
        ResponseStatus::Ok if resp.body.get("permit") == Some(&Value::Bool(false)) => exit::DENY,
        ResponseStatus::Ok => exit::OK,
    };
    match ctx.output() {
        OutputMode::CanonicalJson => {
            let mut out = std::io::stdout().lock();
            out.write_all(&ex.raw).and_then(|()| out.write_all(b"\n")).map_err(err)?;
        }
        OutputMode::Human => {
            if resp.status == ResponseStatus::Error {
                let code = resp.code.as_deref().unwrap_or("ERROR");
                let msg = resp
                    .body
                    .get("message")
                    .or_else(|| resp.body.pointer("/failure/message"))
                    .and_then(Value::as_str)
                    .unwrap_or("");
                eprintln!("error {code}: {msg}");
            }
            if let Some(text) = human(&resp.body) {
                print!("{text}");
            }
        }
    }
    Ok(code)
}

fn save_bundle<R: DeserializeOwned>(
    path: &Path,
    ex: &Exchange,
    envelope: &Envelope,
    parts: impl FnOnce(R) -> (ssgov_core::attest::Receipt, ssgov_core::calculus::Decision, Option<ssgov_core::store::WriteEvent>),
) -> Result<(), Failure> {
    let Ok(reply) = serde_json::from_value::<R>(ex.response.body.clone()) else {
        return Ok(());
    };
    let (receipt, decision, event) = parts(reply);
    let bundle = ReceiptBundle {
        receipt,
        decision,
        envelope: Some(envelope.clone()),
        event,
    };
    let bytes = canonical::to_canonical_bytes(&bundle).map_err(err)?;
    std::fs::write(path, bytes).map_err(|e| err(format!("{}: {e}", path.display())))
}

fn canonical_text<T: serde::Serialize>(v: &T) -> String {
    String::from_utf8(canonical::to_canonical_bytes(v).expect("requests contain no floats")).expect("canonical JSON is UTF-8")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(err)?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| err(format!("{}: {e}", path.display())))
}
