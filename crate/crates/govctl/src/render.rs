use std::fmt::Write;

use ssgov_core::calculus::Decision;
use ssgov_core::canonical::rfc3339;
use ssgov_core::notify::ChangeNotice;
use ssgov_core::protocol::{Gazette, GazetteEntry};
use ssgov_core::scalar::{Scalar, Values};

fn join<I: IntoIterator<Item = String>>(items: I) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(", ")
    }
}

/// A decision with its full trace.
pub fn decision(d: &Decision) -> String {
    let mut out = String::new();
    let verdict = if d.permit { "PERMIT" } else { "DENY" };
    let kind = d.request_kind.as_ref().map(ToString::to_string).unwrap_or_default();
    let subject = d.subject.as_deref().unwrap_or("?");
    let at = d.at.as_ref().map(rfc3339::format).unwrap_or_default();
    let _ = writeln!(out, "{verdict}  {kind} for {subject} at {at}");
    if let Some(f) = &d.frame {
        let _ = writeln!(out, "frame     {}@{} {}", f.frame_id, f.version, f.digest);
    }
    let _ = writeln!(out, "statuses  {}", join(d.statuses.iter().cloned()));
    let _ = writeln!(out, "bundle    {}", join(d.bundle.iter().map(ToString::to_string)));
    let _ = writeln!(out, "required  {}", join(d.required.iter().map(ToString::to_string)));
    let _ = writeln!(out, "missing   {}", join(d.missing_atoms.iter().map(ToString::to_string)));
    if let Some(e) = &d.error {
        let _ = writeln!(out, "error     {}: {}", e.code, e.message);
    }
    if !d.fired_rules.is_empty() {
        let _ = writeln!(out, "rules");
        for r in &d.fired_rules {
            let mark = if r.holds { "holds" } else { "-" };
            let _ = writeln!(out, "  {:<8} {:<32} {mark}", format!("{:?}", r.stage).to_lowercase(), r.rule_id);
        }
    }
    out
}

pub fn rows(rows: &[Values]) -> String {
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .map(|(k, v)| match v {
                Scalar::Str(s) => format!("{k}={s:?}"),
                other => format!("{k}={other}"),
            })
            .collect();
        let _ = writeln!(out, "  {}", cells.join("  "));
    }
    let _ = writeln!(out, "({} row{})", rows.len(), if rows.len() == 1 { "" } else { "s" });
    out
}

pub fn notice(n: &ChangeNotice) -> String {
    format!(
        "{}  {}  sub {}  {:?}  {}",
        rfc3339::format(&n.at),
        n.notice_id,
        n.sub_id,
        n.kind,
        n.delta
    )
}

fn entry(e: &GazetteEntry) -> String {
    let schema = e.schema_version.as_deref().map(|s| &s[..12.min(s.len())]).unwrap_or("-");
    format!(
        "  {:<22} {:<22} schema {:<12} grammar {}  since {}",
        e.name, e.path, schema, e.grammar_version, e.effective_date
    )
}

pub fn gazette(g: &Gazette) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "gazette {}", g.digest);
    if let Some(first) = g.entries.first() {
        let _ = writeln!(out, "frames in force: {}", join(first.frame_versions.iter().cloned()));
    }
    for e in &g.entries {
        let _ = writeln!(out, "{}", entry(e));
    }
    for k in &g.server_keys {
        let _ = writeln!(out, "server key {} ({}) {}", k.key_id, k.owner, k.public_key);
    }
    out
}
