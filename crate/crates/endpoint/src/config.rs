use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use ssgov_core::canonical::rfc3339;
use ssgov_core::scalar::NationalId;
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8740";
pub const DEFAULT_MAX_BODY: usize = 256 * 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {var}: {reason}")]
    Env { var: &'static str, reason: String },
    #[error("cannot write config: {0}")]
    Write(String),
}

/// Tags in force from `from` until the next period starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JurisdictionPeriod {
    #[serde(with = "rfc3339")]
    pub from: DateTime<Utc>,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotifyConfig {
    /// Seconds between scheduler ticks.
    #[serde(default = "default_cycle")]
    pub cycle_secs: u64,
    /// Interval for subscriptions that do not name one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_interval_secs: Option<u64>,
}

fn default_cycle() -> u64 {
    60
}

impl Default for NotifyConfig {
    fn default() -> Self {
        NotifyConfig {
            cycle_secs: default_cycle(),
            default_interval_secs: None,
        }
    }
}

/// Service configuration, read from TOML.
///
/// Environment overrides: `SSGOV_LISTEN`, `SSGOV_DATA_DIR`,
/// `SSGOV_FRAME_DIR`, `SSGOV_KEY_DIR`, `SSGOV_SERVER_KEY`,
/// `SSGOV_OFFICIALS` (comma separated) and `SSGOV_NOTIFY_CYCLE_SECS`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_dir: Option<PathBuf>,
    /// Public key records of everyone allowed to sign requests.
    pub key_dir: PathBuf,
    /// The server's private key, `<key_id>.key.pem`.
    pub server_key: PathBuf,
    #[serde(default)]
    pub officials: BTreeSet<NationalId>,
    pub effective_date: NaiveDate,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
    #[serde(default)]
    pub fsync: bool,
    #[serde(default)]
    pub notify: NotifyConfig,
    #[serde(default)]
    pub jurisdiction: Vec<JurisdictionPeriod>,
}

fn default_listen() -> SocketAddr {
    DEFAULT_LISTEN.parse().expect("valid default")
}

fn default_max_body() -> usize {
    DEFAULT_MAX_BODY
}

impl Config {
    /// Reads a config file. Relative paths resolve against the file's
    /// directory; environment overrides apply last.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_relative(base);
        }
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string_pretty(self).map_err(|e| ConfigError::Write(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ConfigError::Write(e.to_string()))
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.key_dir);
        fix(&mut self.server_key);
        if let Some(d) = self.frame_dir.as_mut() {
            fix(d);
        }
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("SSGOV_LISTEN") {
            self.listen = v.parse().map_err(|e: std::net::AddrParseError| ConfigError::Env {
                var: "SSGOV_LISTEN",
                reason: e.to_string(),
            })?;
        }
        if let Some(v) = var("SSGOV_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("SSGOV_FRAME_DIR") {
            self.frame_dir = Some(v.into());
        }
        if let Some(v) = var("SSGOV_KEY_DIR") {
            self.key_dir = v.into();
        }
        if let Some(v) = var("SSGOV_SERVER_KEY") {
            self.server_key = v.into();
        }
        if let Some(v) = var("SSGOV_OFFICIALS") {
            self.officials = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(NationalId::new)
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::Env {
                    var: "SSGOV_OFFICIALS",
                    reason: e.to_string(),
                })?;
        }
        if let Some(v) = var("SSGOV_NOTIFY_CYCLE_SECS") {
            self.notify.cycle_secs = v.parse().map_err(|e: std::num::ParseIntError| ConfigError::Env {
                var: "SSGOV_NOTIFY_CYCLE_SECS",
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Jurisdiction tags in force at `t`: those of the latest period that
    /// has started, or none.
    pub fn tags_at(&self, t: DateTime<Utc>) -> BTreeSet<String> {
        self.jurisdiction
            .iter()
            .filter(|p| p.from <= t)
            .max_by_key(|p| p.from)
            .map(|p| p.tags.clone())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn sample() -> Config {
        toml::from_str(
            r#"
            data_dir = "data"
            key_dir = "keys"
            server_key = "server/sovereign-1.key.pem"
            officials = ["OFF1"]
            effective_date = "2026-07-01"

            [[jurisdiction]]
            from = "1970-01-01T00:00:00Z"
            tags = ["international", "ship"]

            [[jurisdiction]]
            from = "2026-07-05T00:00:00Z"
            tags = ["iran", "ship"]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn schedule_picks_latest_started_period() {
        let c = sample();
        let before = Utc.with_ymd_and_hms(2026, 7, 4, 23, 59, 59).unwrap();
        let after = Utc.with_ymd_and_hms(2026, 7, 5, 0, 0, 0).unwrap();
        assert!(c.tags_at(before).contains("international"));
        assert!(c.tags_at(after).contains("iran"));
        assert!(c.tags_at(Utc.with_ymd_and_hms(1960, 1, 1, 0, 0, 0).unwrap()).is_empty());
    }

    #[test]
    fn env_overrides_apply() {
        let mut c = sample();
        c.apply_env(|k| match k {
            "SSGOV_LISTEN" => Some("0.0.0.0:9000".into()),
            "SSGOV_OFFICIALS" => Some("A1, B2".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.officials.len(), 2);
        assert!(c.apply_env(|k| (k == "SSGOV_LISTEN").then(|| "nope".into())).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = sample();
        c.resolve_relative(Path::new("/srv/ssgov"));
        assert_eq!(c.data_dir, PathBuf::from("/srv/ssgov/data"));
        assert_eq!(c.server_key, PathBuf::from("/srv/ssgov/server/sovereign-1.key.pem"));
    }
}
