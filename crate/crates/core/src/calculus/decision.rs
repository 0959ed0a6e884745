use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::atom::{Bundle, EligibilityAtom, RequiredSet};
use super::frame::{FrameRef, RequestKind};
use crate::canonical::{self, rfc3339, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Status,
    Grant,
    Request,
    Access,
}

/// One rule evaluated while deciding, in frame declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFiring {
    pub rule_id: String,
    pub stage: Stage,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionError {
    pub code: String,
    pub message: String,
}

/// Outcome of a request, with the full trace a reviewer needs to
/// reproduce it.
///
/// `permit` holds exactly when `missing_atoms` is empty and no error
/// occurred; an error always denies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub permit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_kind: Option<RequestKind>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "rfc3339::option")]
    pub at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameRef>,
    #[serde(default)]
    pub statuses: BTreeSet<String>,
    #[serde(default)]
    pub bundle: Bundle,
    #[serde(default)]
    pub required: RequiredSet,
    #[serde(default)]
    pub fired_rules: Vec<RuleFiring>,
    #[serde(default)]
    pub missing_atoms: BTreeSet<EligibilityAtom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<DecisionError>,
}

impl Decision {
    pub(crate) fn blank() -> Self {
        Decision {
            permit: false,
            subject: None,
            request_kind: None,
            at: None,
            frame: None,
            statuses: BTreeSet::new(),
            bundle: Bundle::new(),
            required: RequiredSet::new(),
            fired_rules: Vec::new(),
            missing_atoms: BTreeSet::new(),
            error: None,
        }
    }

    pub fn digest(&self) -> Digest {
        canonical::canonical_digest(self).expect("decisions contain no floats")
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("decisions contain no floats")
    }

    pub fn missing_names(&self) -> Vec<String> {
        self.missing_atoms.iter().map(ToString::to_string).collect()
    }

    /// Human-readable rendering including the rule trace.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        let verdict = if self.permit { "PERMIT" } else { "DENY" };
        out.push_str(verdict);
        if let (Some(s), Some(k)) = (&self.subject, &self.request_kind) {
            out.push_str(&format!(" {s} {k}"));
        }
        out.push('\n');
        if let Some(f) = &self.frame {
            out.push_str(&format!("frame: {}@{} ({})\n", f.frame_id, f.version, f.digest));
        }
        if let Some(at) = &self.at {
            out.push_str(&format!("at: {}\n", rfc3339::format(at)));
        }
        let join = |it: Vec<String>| it.join(", ");
        out.push_str(&format!("statuses: {{{}}}\n", join(self.statuses.iter().cloned().collect())));
        out.push_str(&format!("bundle: {{{}}}\n", join(self.bundle.iter().map(ToString::to_string).collect())));
        out.push_str(&format!("required: {{{}}}\n", join(self.required.iter().map(ToString::to_string).collect())));
        out.push_str(&format!("missing: {{{}}}\n", join(self.missing_names())));
        out.push_str("trace:\n");
        for f in &self.fired_rules {
            out.push_str(&format!(
                "  {:<8} {:<32} {}\n",
                format!("{:?}", f.stage).to_lowercase(),
                f.rule_id,
                if f.holds { "holds" } else { "fails" }
            ));
        }
        if let Some(e) = &self.error {
            out.push_str(&format!("error: {} {}\n", e.code, e.message));
        }
        out
    }
}
