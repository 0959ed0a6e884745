use chrono::{DateTime, Utc};
use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{is_hex_of_len, sign, verify, AttestError, KeyStore};
use crate::canonical::{self, rfc3339, Digest};
use crate::scalar::NationalId;

const ENVELOPE_FIELDS: [&str; 7] = ["endpoint", "command_text", "requester", "key_id", "at", "nonce", "signature"];

/// A signed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub endpoint: String,
    pub command_text: String,
    pub requester: NationalId,
    pub key_id: String,
    #[serde(with = "rfc3339")]
    pub at: DateTime<Utc>,
    /// 16 random bytes, lowercase hex.
    pub nonce: String,
    /// Ed25519 signature, lowercase hex; empty until signed.
    pub signature: String,
}

fn fresh_nonce() -> String {
    let mut b = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut b);
    hex::encode(b)
}

fn without_signature<T: Serialize>(msg: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(msg).expect("messages serialize");
    if let Value::Object(m) = &mut v {
        m.remove("signature");
    }
    canonical::canonical_value_bytes(&v).expect("messages contain no floats")
}

impl Envelope {
    pub fn new(
        endpoint: impl Into<String>,
        command_text: impl Into<String>,
        requester: NationalId,
        key_id: impl Into<String>,
        at: DateTime<Utc>,
    ) -> Self {
        Envelope {
            endpoint: endpoint.into(),
            command_text: command_text.into(),
            requester,
            key_id: key_id.into(),
            at,
            nonce: fresh_nonce(),
            signature: String::new(),
        }
    }

    /// Canonical bytes of every field except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        without_signature(self)
    }

    pub fn sign(mut self, key: &SigningKey) -> Self {
        self.signature = sign(&self.signing_bytes(), key);
        self
    }

    pub fn verify_with(&self, key: &VerifyingKey) -> bool {
        verify(&self.signing_bytes(), &self.signature, key)
    }

    /// Resolves the key, checks that it is valid at `at` and belongs to the
    /// requester, then checks the signature.
    pub fn verify(&self, keys: &KeyStore) -> Result<(), AttestError> {
        let record = keys.resolve(&self.key_id, self.at)?;
        if record.owner != self.requester {
            return Err(AttestError::KeyOwnerMismatch {
                key_id: self.key_id.clone(),
                requester: self.requester.to_string(),
            });
        }
        if self.verify_with(&record.verifying_key()?) {
            Ok(())
        } else {
            Err(AttestError::BadSignature)
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("envelopes contain no floats")
    }

    /// Digest of the full signed envelope.
    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    /// Parses an envelope, reporting the first missing field by name.
    pub fn from_json(bytes: &[u8]) -> Result<Self, AttestError> {
        let v: Value = serde_json::from_slice(bytes).map_err(|e| AttestError::Malformed(e.to_string()))?;
        canonical::canonicalize(&v, &ENVELOPE_FIELDS)?;
        let env: Envelope = serde_json::from_value(v).map_err(|e| AttestError::Malformed(e.to_string()))?;
        if !is_hex_of_len(&env.nonce, 32) {
            return Err(AttestError::Malformed("nonce must be 32 lowercase hex characters".into()));
        }
        if !is_hex_of_len(&env.signature, 128) {
            return Err(AttestError::Malformed("signature must be 128 lowercase hex characters".into()));
        }
        Ok(env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error,
}

/// A signed answer. `status` is `ok` for every legal outcome, deny
/// included; `error` carries a machine-readable `code`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseEnvelope {
    pub endpoint: String,
    /// Digest of the request envelope, when one could be parsed.
    pub request_digest: Option<Digest>,
    #[serde(with = "rfc3339")]
    pub at: DateTime<Utc>,
    pub status: ResponseStatus,
    pub code: Option<String>,
    pub body: Value,
    pub server_key_id: String,
    pub signature: String,
}

impl ResponseEnvelope {
    pub fn ok(endpoint: &str, request_digest: Option<Digest>, at: DateTime<Utc>, body: Value) -> Self {
        ResponseEnvelope {
            endpoint: endpoint.to_string(),
            request_digest,
            at,
            status: ResponseStatus::Ok,
            code: None,
            body,
            server_key_id: String::new(),
            signature: String::new(),
        }
    }

    pub fn error(endpoint: &str, request_digest: Option<Digest>, at: DateTime<Utc>, code: &str, message: &str) -> Self {
        ResponseEnvelope {
            status: ResponseStatus::Error,
            code: Some(code.to_string()),
            ..Self::ok(endpoint, request_digest, at, serde_json::json!({ "message": message }))
        }
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        without_signature(self)
    }

    pub fn sign(mut self, key_id: &str, key: &SigningKey) -> Self {
        self.server_key_id = key_id.to_string();
        self.signature = sign(&self.signing_bytes(), key);
        self
    }

    pub fn verify_with(&self, key: &VerifyingKey) -> bool {
        verify(&self.signing_bytes(), &self.signature, key)
    }

    pub fn verify(&self, keys: &KeyStore) -> Result<(), AttestError> {
        let record = keys.resolve(&self.server_key_id, self.at)?;
        if self.verify_with(&record.verifying_key()?) {
            Ok(())
        } else {
            Err(AttestError::BadSignature)
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("responses contain no floats")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, AttestError> {
        serde_json::from_slice(bytes).map_err(|e| AttestError::Malformed(e.to_string()))
    }
}
