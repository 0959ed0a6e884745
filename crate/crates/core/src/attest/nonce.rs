use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::AttestError;
use crate::canonical::{self, rfc3339};
use crate::scalar::NationalId;

/// Envelopes must be dated within this distance of the server clock, and
/// their nonces are remembered for as long.
pub const NONCE_WINDOW: Duration = Duration::hours(24);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Seen {
    requester: NationalId,
    nonce: String,
    #[serde(with = "rfc3339")]
    at: DateTime<Utc>,
}

#[derive(Default)]
struct Inner {
    by_key: BTreeSet<(NationalId, String)>,
    by_time: BTreeMap<DateTime<Utc>, Vec<(NationalId, String)>>,
    file: Option<File>,
    appended: usize,
}

/// Seen nonces per requester; check-and-insert is atomic.
pub struct NonceRegistry {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl NonceRegistry {
    pub fn in_memory() -> Self {
        NonceRegistry {
            path: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    /// Opens (or creates) a persisted seen-set at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AttestError> {
        let path = path.as_ref().to_path_buf();
        let mut inner = Inner::default();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let s: Seen = serde_json::from_str(&line).map_err(|e| AttestError::Malformed(e.to_string()))?;
                inner.insert(s);
            }
        }
        inner.file = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        Ok(NonceRegistry {
            path: Some(path),
            inner: Mutex::new(inner),
        })
    }

    /// Accepts `(requester, nonce)` once. Envelopes dated more than the
    /// window away from `now` are refused outright, so forgetting expired
    /// nonces never reopens a replay.
    pub fn check_and_insert(
        &self,
        requester: &NationalId,
        nonce: &str,
        at: DateTime<Utc>,
        now: DateTime<Utc>,
    ) -> Result<(), AttestError> {
        if at < now - NONCE_WINDOW || at > now + NONCE_WINDOW {
            return Err(AttestError::OutsideWindow { at: rfc3339::format(&at) });
        }
        let mut inner = self.inner.lock().expect("nonce lock poisoned");
        inner.prune(now - NONCE_WINDOW * 2);
        if inner.by_key.contains(&(requester.clone(), nonce.to_string())) {
            return Err(AttestError::ReplayedNonce);
        }
        let seen = Seen {
            requester: requester.clone(),
            nonce: nonce.to_string(),
            at,
        };
        if let Some(f) = inner.file.as_mut() {
            let mut line = canonical::to_canonical_bytes(&seen).expect("no floats");
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        inner.insert(seen);
        inner.appended += 1;
        if inner.appended > 4096 && inner.appended > 2 * inner.by_key.len() {
            if let Some(path) = &self.path {
                inner.compact(path)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("nonce lock poisoned").by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Inner {
    fn insert(&mut self, s: Seen) {
        let key = (s.requester, s.nonce);
        if self.by_key.insert(key.clone()) {
            self.by_time.entry(s.at).or_default().push(key);
        }
    }

    /// Forgets nonces dated before `cutoff`.
    fn prune(&mut self, cutoff: DateTime<Utc>) {
        let keep = self.by_time.split_off(&cutoff);
        for keys in std::mem::replace(&mut self.by_time, keep).into_values() {
            for k in keys {
                self.by_key.remove(&k);
            }
        }
    }

    fn compact(&mut self, path: &Path) -> Result<(), AttestError> {
        let tmp = path.with_extension("tmp");
        let mut out = Vec::new();
        for (at, keys) in &self.by_time {
            for (requester, nonce) in keys {
                let s = Seen {
                    requester: requester.clone(),
                    nonce: nonce.clone(),
                    at: *at,
                };
                out.extend(canonical::to_canonical_bytes(&s).expect("no floats"));
                out.push(b'\n');
            }
        }
        fs::write(&tmp, &out)?;
        fs::rename(&tmp, path)?;
        self.file = Some(OpenOptions::new().append(true).open(path)?);
        self.appended = self.by_key.len();
        Ok(())
    }
}
