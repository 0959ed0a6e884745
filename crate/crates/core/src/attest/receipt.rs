use chrono::{DateTime, Utc};
use ed25519_dalek::{SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use super::envelope::Envelope;
use super::{sign, verify, AttestError, KeyStore};
use crate::calculus::Decision;
use crate::canonical::{self, rfc3339, Digest};
use crate::store::WriteEvent;

/// Server-signed evidence of how a request was decided and, for writes,
/// which event it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Receipt {
    pub receipt_id: String,
    pub request_digest: Digest,
    pub envelope_digest: Option<Digest>,
    pub decision_digest: Digest,
    pub permit: bool,
    pub event_seq: Option<u64>,
    /// Hash of the event's canonical log line.
    pub event_digest: Option<Digest>,
    #[serde(with = "rfc3339")]
    pub at: DateTime<Utc>,
    pub server_key_id: String,
    pub signature: String,
}

impl Receipt {
    #[allow(clippy::too_many_arguments)]
    pub fn issue(
        receipt_id: &str,
        request_digest: Digest,
        envelope: Option<&Envelope>,
        decision: &Decision,
        event: Option<&WriteEvent>,
        at: DateTime<Utc>,
        server_key_id: &str,
        key: &SigningKey,
    ) -> Receipt {
        let mut r = Receipt {
            receipt_id: receipt_id.to_string(),
            request_digest,
            envelope_digest: envelope.map(Envelope::digest),
            decision_digest: decision.digest(),
            permit: decision.permit,
            event_seq: event.map(|e| e.seq),
            event_digest: event.map(WriteEvent::hash),
            at,
            server_key_id: server_key_id.to_string(),
            signature: String::new(),
        };
        r.signature = sign(&r.signing_bytes(), key);
        r
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("receipts serialize");
        v.as_object_mut().expect("object").remove("signature");
        canonical::canonical_value_bytes(&v).expect("receipts contain no floats")
    }

    pub fn verify_with(&self, key: &VerifyingKey) -> bool {
        verify(&self.signing_bytes(), &self.signature, key)
    }
}

/// A receipt with the canonical inputs needed to check it offline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiptBundle {
    pub receipt: Receipt,
    pub decision: Decision,
    #[serde(default)]
    pub envelope: Option<Envelope>,
    #[serde(default)]
    pub event: Option<WriteEvent>,
}

fn ensure(ok: bool, what: &str) -> Result<(), AttestError> {
    if ok {
        Ok(())
    } else {
        Err(AttestError::Mismatch(what.to_string()))
    }
}

/// Checks a bundle using nothing but public keys: the server signature on
/// the receipt, the decision and event digests it commits to, and the
/// requester's signature on the original envelope.
pub fn verify_bundle(bundle: &ReceiptBundle, keys: &KeyStore) -> Result<(), AttestError> {
    let r = &bundle.receipt;
    let server = keys.resolve(&r.server_key_id, r.at)?;
    if !r.verify_with(&server.verifying_key()?) {
        return Err(AttestError::BadSignature);
    }
    ensure(bundle.decision.digest() == r.decision_digest, "decision digest")?;
    ensure(bundle.decision.permit == r.permit, "permit flag")?;
    match (&bundle.event, r.event_seq) {
        (None, None) => {}
        (Some(ev), Some(seq)) => {
            ensure(ev.seq == seq, "event seq")?;
            ensure(Some(ev.hash()) == r.event_digest, "event digest")?;
            ensure(ev.receipt_id == r.receipt_id, "event receipt id")?;
            ensure(r.permit, "write under a deny")?;
        }
        (None, Some(_)) => return Err(AttestError::Mismatch("event missing from bundle".into())),
        (Some(_), None) => return Err(AttestError::Mismatch("receipt records no event".into())),
    }
    match (&bundle.envelope, r.envelope_digest) {
        (None, None) => {}
        (Some(env), Some(d)) => {
            ensure(env.digest() == d, "envelope digest")?;
            env.verify(keys)?;
            if let Some(ev) = &bundle.event {
                ensure(ev.requester == env.requester, "event requester")?;
                ensure(ev.command_digest == Digest::of(env.command_text.as_bytes()), "command digest")?;
            }
        }
        _ => return Err(AttestError::Mismatch("envelope".into())),
    }
    Ok(())
}
