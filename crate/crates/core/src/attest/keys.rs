use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use ed25519_dalek::pkcs8::spki::der::pem::LineEnding;
use ed25519_dalek::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use ed25519_dalek::{SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use super::{is_hex_of_len, AttestError};
use crate::canonical::{self, rfc3339};
use crate::scalar::{is_valid_national_id, NationalId};

/// A registered public key and the interval in which it may sign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRecord {
    pub key_id: String,
    pub owner: NationalId,
    /// Raw Ed25519 public key, lowercase hex.
    pub public_key: String,
    #[serde(with = "rfc3339")]
    pub valid_from: DateTime<Utc>,
    #[serde(default, with = "rfc3339::option")]
    pub valid_to: Option<DateTime<Utc>>,
}

impl KeyRecord {
    pub fn new(key_id: impl Into<String>, owner: NationalId, key: &VerifyingKey, valid_from: DateTime<Utc>) -> Self {
        KeyRecord {
            key_id: key_id.into(),
            owner,
            public_key: hex::encode(key.as_bytes()),
            valid_from,
            valid_to: None,
        }
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey, AttestError> {
        if !is_hex_of_len(&self.public_key, 64) {
            return Err(AttestError::Key(format!("{}: public key must be 64 hex characters", self.key_id)));
        }
        let mut b = [0u8; 32];
        hex::decode_to_slice(&self.public_key, &mut b).map_err(|e| AttestError::Key(e.to_string()))?;
        VerifyingKey::from_bytes(&b).map_err(|e| AttestError::Key(e.to_string()))
    }

    /// Half-open validity: `valid_from <= t < valid_to`.
    pub fn is_valid_at(&self, t: DateTime<Utc>) -> bool {
        self.valid_from <= t && self.valid_to.is_none_or(|end| t < end)
    }

    fn overlaps(&self, other: &KeyRecord) -> bool {
        let a_end = self.valid_to.unwrap_or(DateTime::<Utc>::MAX_UTC);
        let b_end = other.valid_to.unwrap_or(DateTime::<Utc>::MAX_UTC);
        self.valid_from < b_end && other.valid_from < a_end
    }

    pub fn public_pem(&self) -> Result<String, AttestError> {
        self.verifying_key()?
            .to_public_key_pem(LineEnding::LF)
            .map_err(|e| AttestError::Key(e.to_string()))
    }
}

pub fn public_key_from_pem(pem: &str) -> Result<VerifyingKey, AttestError> {
    VerifyingKey::from_public_key_pem(pem).map_err(|e| AttestError::Key(e.to_string()))
}

pub fn generate_signing_key() -> SigningKey {
    SigningKey::generate(&mut rand::rngs::OsRng)
}

/// A private key together with its public record.
#[derive(Debug, Clone)]
pub struct SigningIdentity {
    pub record: KeyRecord,
    pub key: SigningKey,
}

impl SigningIdentity {
    pub fn generate(key_id: impl Into<String>, owner: NationalId, valid_from: DateTime<Utc>) -> Self {
        let key = generate_signing_key();
        SigningIdentity {
            record: KeyRecord::new(key_id, owner, &key.verifying_key(), valid_from),
            key,
        }
    }

    /// Writes `<key_id>.key.pem` (PKCS#8), `<key_id>.pem` and
    /// `<key_id>.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, AttestError> {
        fs::create_dir_all(dir)?;
        let private = self
            .key
            .to_pkcs8_pem(LineEnding::LF)
            .map_err(|e| AttestError::Key(e.to_string()))?;
        let path = dir.join(format!("{}.key.pem", self.record.key_id));
        fs::write(&path, private.as_bytes())?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&path, fs::Permissions::from_mode(0o600))?;
        }
        KeyStore::write_record(dir, &self.record)?;
        Ok(path)
    }

    /// Loads `<key_id>.key.pem` and `<key_id>.json` from `dir`, or a private
    /// key file directly when `path` ends in `.key.pem`.
    pub fn load(path: &Path) -> Result<Self, AttestError> {
        let pem = fs::read_to_string(path)?;
        let key = SigningKey::from_pkcs8_pem(&pem).map_err(|e| AttestError::Key(e.to_string()))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let key_id = name
            .strip_suffix(".key.pem")
            .ok_or_else(|| AttestError::Key(format!("{name}: expected <key_id>.key.pem")))?;
        let record_path = path.with_file_name(format!("{key_id}.json"));
        let record: KeyRecord = serde_json::from_slice(&fs::read(&record_path)?)
            .map_err(|e| AttestError::Key(format!("{}: {e}", record_path.display())))?;
        if record.verifying_key()? != key.verifying_key() {
            return Err(AttestError::Key(format!("{key_id}: private key does not match record")));
        }
        Ok(SigningIdentity { record, key })
    }
}

/// Public keys by key id, optionally backed by a directory holding
/// `<key_id>.pem` and `<key_id>.json` per key.
#[derive(Debug, Default)]
pub struct KeyStore {
    dir: Option<PathBuf>,
    keys: RwLock<BTreeMap<String, KeyRecord>>,
}

impl KeyStore {
    pub fn in_memory() -> Self {
        KeyStore::default()
    }

    /// Loads every `<key_id>.json` in `dir`. A `<key_id>.pem` next to it
    /// must hold the same public key.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self, AttestError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut keys = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record: KeyRecord = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| AttestError::Key(format!("{}: {e}", path.display())))?;
            let pem_path = dir.join(format!("{}.pem", record.key_id));
            if pem_path.exists() && public_key_from_pem(&fs::read_to_string(&pem_path)?)? != record.verifying_key()? {
                return Err(AttestError::Key(format!("{}: PEM and record disagree", record.key_id)));
            }
            keys.insert(record.key_id.clone(), record);
        }
        Ok(KeyStore {
            dir: Some(dir.to_path_buf()),
            keys: RwLock::new(keys),
        })
    }

    fn write_record(dir: &Path, record: &KeyRecord) -> Result<(), AttestError> {
        fs::create_dir_all(dir)?;
        let json = canonical::to_canonical_bytes(record).expect("key records contain no floats");
        fs::write(dir.join(format!("{}.json", record.key_id)), json)?;
        fs::write(dir.join(format!("{}.pem", record.key_id)), record.public_pem()?)?;
        Ok(())
    }

    /// Adds a key. An owner may hold only one key per instant.
    pub fn register(&self, record: KeyRecord) -> Result<(), AttestError> {
        if !is_valid_national_id(&record.key_id) {
            return Err(AttestError::Key(format!("invalid key id {:?}", record.key_id)));
        }
        record.verifying_key()?;
        let mut keys = self.keys.write().expect("key store lock poisoned");
        if keys.contains_key(&record.key_id) {
            return Err(AttestError::Key(format!("key id {} already registered", record.key_id)));
        }
        if keys.values().any(|k| k.owner == record.owner && k.overlaps(&record)) {
            return Err(AttestError::KeyOverlap(record.owner.to_string()));
        }
        if let Some(dir) = &self.dir {
            Self::write_record(dir, &record)?;
        }
        keys.insert(record.key_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, key_id: &str) -> Option<KeyRecord> {
        self.keys.read().expect("key store lock poisoned").get(key_id).cloned()
    }

    pub fn records(&self) -> Vec<KeyRecord> {
        self.keys.read().expect("key store lock poisoned").values().cloned().collect()
    }

    /// The record for `key_id` if it is valid at `at`.
    pub fn resolve(&self, key_id: &str, at: DateTime<Utc>) -> Result<KeyRecord, AttestError> {
        let record = self.get(key_id).ok_or_else(|| AttestError::UnknownKeyId(key_id.to_string()))?;
        if !record.is_valid_at(at) {
            return Err(AttestError::ExpiredKey {
                key_id: key_id.to_string(),
                at: rfc3339::format(&at),
            });
        }
        Ok(record)
    }
}
