//! Signed envelopes, key records, receipts and replay protection.
//!
//! Every signature is Ed25519 over the SHA-256 digest of a message's
//! canonical bytes with the `signature` field removed.

mod envelope;
mod keys;
mod nonce;
mod receipt;

pub use envelope::{Envelope, ResponseEnvelope, ResponseStatus};
pub use keys::{generate_signing_key, public_key_from_pem, KeyRecord, KeyStore, SigningIdentity};
pub use nonce::{NonceRegistry, NONCE_WINDOW};
pub use receipt::{verify_bundle, Receipt, ReceiptBundle};

pub use ed25519_dalek::{SigningKey, VerifyingKey};
use ed25519_dalek::{Signature, Signer, Verifier};
use thiserror::Error;

use crate::canonical::{decode_lower_hex, CanonicalError, Digest};

#[derive(Debug, Error)]
pub enum AttestError {
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown key id `{0}`")]
    UnknownKeyId(String),
    #[error("key `{key_id}` is not valid at {at}")]
    ExpiredKey { key_id: String, at: String },
    #[error("key `{key_id}` does not belong to `{requester}`")]
    KeyOwnerMismatch { key_id: String, requester: String },
    #[error("owner `{0}` already has a key valid in that interval")]
    KeyOverlap(String),
    #[error("signature invalid")]
    BadSignature,
    #[error("nonce already seen for this requester")]
    ReplayedNonce,
    #[error("envelope time {at} is outside the replay window")]
    OutsideWindow { at: String },
    #[error("receipt does not match its inputs: {0}")]
    Mismatch(String),
    #[error("key material: {0}")]
    Key(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AttestError {
    pub fn code(&self) -> &'static str {
        match self {
            AttestError::MissingField(_) | AttestError::Malformed(_) => "MALFORMED_ENVELOPE",
            AttestError::ReplayedNonce => "REPLAYED_NONCE",
            AttestError::OutsideWindow { .. } => "STALE_ENVELOPE",
            AttestError::Io(_) => "INTERNAL",
            _ => "AUTH_FAIL",
        }
    }
}

impl From<CanonicalError> for AttestError {
    fn from(e: CanonicalError) -> Self {
        match e {
            CanonicalError::MissingField(f) => AttestError::MissingField(f),
            other => AttestError::Malformed(other.to_string()),
        }
    }
}

/// Signs the SHA-256 of `bytes`; returns 128 lowercase hex characters.
pub fn sign(bytes: &[u8], key: &SigningKey) -> String {
    hex::encode(key.sign(&Digest::of(bytes).0).to_bytes())
}

pub fn verify(bytes: &[u8], signature_hex: &str, key: &VerifyingKey) -> bool {
    let Some(raw) = decode_lower_hex(signature_hex) else {
        return false;
    };
    let Ok(arr) = <[u8; 64]>::try_from(raw.as_slice()) else {
        return false;
    };
    key.verify(&Digest::of(bytes).0, &Signature::from_bytes(&arr)).is_ok()
}

pub(crate) fn is_hex_of_len(s: &str, len: usize) -> bool {
    s.len() == len && decode_lower_hex(s).is_some()
}
