use std::collections::BTreeMap;

use ssgov_core::attest::KeyRecord;
use ssgov_core::calculus::FrameSet;
use ssgov_core::canonical::canonical_digest;
use ssgov_core::command::GRAMMAR_VERSION;
use ssgov_core::protocol::{paths, Gazette, GazetteEntry};
use ssgov_core::store::{EventKind, WriteEvent};

use crate::config::Config;

/// The published list of endpoints and registries. Built only from
/// configuration, loaded frames and the event log, so it is identical
/// across restarts with the same state.
pub fn build(config: &Config, events: &[WriteEvent], frames: &FrameSet, server_key: &KeyRecord) -> Gazette {
    let frame_versions = frames.versions();
    let service = |name: &str, path: &str| GazetteEntry {
        name: name.to_string(),
        path: path.to_string(),
        schema_version: None,
        frame_versions: frame_versions.clone(),
        grammar_version: GRAMMAR_VERSION.to_string(),
        effective_date: config.effective_date,
    };
    let mut entries: Vec<GazetteEntry> = [
        ("command", paths::COMMAND),
        ("decide", paths::DECIDE),
        ("subscribe", paths::SUBSCRIBE),
        ("notices", paths::NOTICES),
        ("admin", paths::ADMIN),
        ("gazette", paths::GAZETTE),
        ("health", paths::HEALTH),
    ]
    .into_iter()
    .map(|(n, p)| service(n, p))
    .collect();

    let mut registries = BTreeMap::new();
    for ev in events.iter().filter(|e| e.kind == EventKind::Define) {
        if let Some(schema) = &ev.schema {
            registries.insert(ev.registry_id.clone(), (schema, ev.at.date_naive()));
        }
    }
    for (id, (schema, defined)) in registries {
        entries.push(GazetteEntry {
            name: format!("registry:{id}"),
            path: paths::COMMAND.to_string(),
            schema_version: Some(canonical_digest(schema).expect("schemas contain no floats").to_hex()),
            frame_versions: frame_versions.clone(),
            grammar_version: GRAMMAR_VERSION.to_string(),
            effective_date: defined.max(config.effective_date),
        });
    }
    Gazette::new(entries, vec![server_key.clone()])
}
