//! Self-contained demo deployments built from the bundled fixtures.

use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use ssgov_core::attest::{KeyStore, SigningIdentity};
use ssgov_core::calculus::LegalFrame;
use ssgov_core::command::AuditLog;
use ssgov_core::fixtures::{self, who, Dataset};
use ssgov_core::scalar::{NationalId, Scalar};
use ssgov_core::store::{Store, StoreOptions};

use crate::config::{Config, JurisdictionPeriod, NotifyConfig, DEFAULT_MAX_BODY};
use crate::ServiceError;

pub const SERVER_OWNER: &str = "SOVEREIGN";
pub const SERVER_KEY_ID: &str = "sovereign-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    /// Slovenian registries: child support, driving permits, land.
    Si,
    /// The cruise ship sauna, with the Iranian frame from day 5.
    Ship,
}

/// Where a demo deployment lives.
#[derive(Debug, Clone)]
pub struct Demo {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub config: Config,
    /// Private keys of the fixture people, `<key_id>.key.pem`.
    pub identities: PathBuf,
}

impl Demo {
    pub fn identity_path(&self, owner: &str) -> PathBuf {
        self.identities.join(format!("{}.key.pem", key_id_for(owner)))
    }
}

pub fn key_id_for(owner: &str) -> String {
    format!("{}-1", owner.to_ascii_lowercase())
}

/// Instant the demo registries are seeded at; keys are valid from here.
pub fn seed_time(scenario: Scenario) -> DateTime<Utc> {
    match scenario {
        Scenario::Si => fixtures::si_time() - Duration::days(1),
        Scenario::Ship => fixtures::voyage_day(1) - Duration::days(1),
    }
}

fn people(data: &Dataset, registry: &str) -> BTreeSet<String> {
    data.rows
        .get(registry)
        .into_iter()
        .flatten()
        .filter_map(|r| match r.get("nin") {
            Some(Scalar::Str(s)) => Some(s.clone()),
            _ => None,
        })
        .chain([who::OFFICIAL.to_string()])
        .collect()
}

/// Writes a complete deployment under `root`: config, frames, seeded
/// registries, the server key and one key per fixture person.
pub fn init(root: &Path, scenario: Scenario, listen: SocketAddr) -> Result<Demo, ServiceError> {
    let (data, frames, registry) = match scenario {
        Scenario::Si => (fixtures::si_data(), vec![fixtures::si_frame()], "rc"),
        Scenario::Ship => (
            fixtures::ship_data(),
            vec![fixtures::ship_frame(), fixtures::iran_frame()],
            "pax",
        ),
    };
    let at = seed_time(scenario);
    let data_dir = root.join("data");
    let frame_dir = root.join("frames");
    let key_dir = root.join("keys");
    let identities = root.join("identities");
    if data_dir.join("store").exists() {
        return Err(ServiceError::Setup(format!("{} already holds a deployment", root.display())));
    }
    fs::create_dir_all(&data_dir)?;
    fs::create_dir_all(&frame_dir)?;

    {
        let store = Store::open(data_dir.join("store"), StoreOptions::default())?;
        let audit = AuditLog::open(data_dir.join("audit.ndjson"))?;
        data.seed(&store, Some(&audit), at)?;
    }
    for f in &frames {
        write_frame(&frame_dir, f)?;
    }

    let keys = KeyStore::open_dir(&key_dir)?;
    let server = SigningIdentity::generate(SERVER_KEY_ID, id(SERVER_OWNER), at);
    let server_key = server.save(&root.join("server"))?;
    keys.register(server.record.clone())?;
    for person in people(&data, registry) {
        let ident = SigningIdentity::generate(key_id_for(&person), id(&person), at);
        ident.save(&identities)?;
        keys.register(ident.record)?;
    }

    let epoch = Utc.with_ymd_and_hms(1970, 1, 1, 0, 0, 0).unwrap();
    let period = |from: DateTime<Utc>, tags: &[&str]| JurisdictionPeriod {
        from,
        tags: tags.iter().map(|s| s.to_string()).collect(),
    };
    let jurisdiction = match scenario {
        Scenario::Si => vec![period(epoch, &fixtures::SI_TAGS)],
        Scenario::Ship => vec![
            period(epoch, &fixtures::SHIP_TAGS),
            period(
                fixtures::voyage_day(5).date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc(),
                &fixtures::IRAN_TAGS,
            ),
        ],
    };
    let config = Config {
        listen,
        data_dir,
        frame_dir: Some(frame_dir),
        key_dir,
        server_key,
        officials: [id(who::OFFICIAL)].into_iter().collect(),
        effective_date: at.date_naive(),
        max_body_bytes: DEFAULT_MAX_BODY,
        fsync: false,
        notify: NotifyConfig::default(),
        jurisdiction,
    };
    let config_path = root.join("ssgov.toml");
    config.save(&config_path)?;
    Ok(Demo {
        root: root.to_path_buf(),
        config_path,
        config,
        identities,
    })
}

fn write_frame(dir: &Path, frame: &LegalFrame) -> std::io::Result<()> {
    fs::write(
        dir.join(format!("{}-v{}.json", frame.frame_id, frame.version)),
        frame.canonical_bytes(),
    )
}

fn id(s: &str) -> NationalId {
    NationalId::new(s).expect("fixture ids are valid")
}
