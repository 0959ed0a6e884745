use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Utc};
use ssgov_core::attest::{AttestError, Envelope, KeyStore, ResponseEnvelope, SigningIdentity};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("server sent an unreadable response (HTTP {status}): {reason}")]
    BadResponse { status: u16, reason: String },
    #[error("response {0}")]
    Unverified(AttestError),
}

/// One request and its answer, with the raw bytes kept for verbatim
/// output.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub http_status: u16,
    pub raw: Vec<u8>,
    pub response: ResponseEnvelope,
}

pub struct Client {
    base: String,
    agent: ureq::Agent,
    keys: Option<KeyStore>,
}

impl Client {
    /// `keys` is a directory of public key records; when given, every
    /// response signature is checked against it.
    pub fn new(base: &str, keys: Option<&Path>) -> Result<Self, ClientError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let keys = keys
            .map(KeyStore::open_dir)
            .transpose()
            .map_err(|e| ClientError::Transport(format!("key directory: {e}")))?;
        Ok(Client {
            base: base.trim_end_matches('/').to_string(),
            agent,
            keys,
        })
    }

    pub fn verifies(&self) -> bool {
        self.keys.is_some()
    }

    pub fn post_envelope(&self, envelope: &Envelope) -> Result<Exchange, ClientError> {
        let url = format!("{}{}", self.base, envelope.endpoint);
        let resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(&envelope.canonical_bytes()[..])
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        self.finish(resp)
    }

    pub fn get(&self, path: &str) -> Result<Exchange, ClientError> {
        let url = format!("{}{}", self.base, path);
        let resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        self.finish(resp)
    }

    fn finish(&self, mut resp: ureq::http::Response<ureq::Body>) -> Result<Exchange, ClientError> {
        let http_status = resp.status().as_u16();
        let mut raw = Vec::new();
        resp.body_mut()
            .as_reader()
            .read_to_end(&mut raw)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let response = ResponseEnvelope::from_json(&raw).map_err(|e| ClientError::BadResponse {
            status: http_status,
            reason: e.to_string(),
        })?;
        if let Some(keys) = &self.keys {
            response.verify(keys).map_err(ClientError::Unverified)?;
        }
        Ok(Exchange {
            http_status,
            raw,
            response,
        })
    }
}

/// Builds and signs an envelope for `endpoint`.
pub fn sign_envelope(identity: &SigningIdentity, endpoint: &str, text: String, at: DateTime<Utc>) -> Envelope {
    Envelope::new(endpoint, text, identity.record.owner.clone(), identity.record.key_id.clone(), at).sign(&identity.key)
}
