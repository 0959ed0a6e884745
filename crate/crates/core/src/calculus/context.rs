use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::frame::RequestKind;
use crate::canonical::rfc3339;
use crate::scalar::Scalar;

/// Parameters derived from `time` and always available to conditions.
pub const DERIVED_PARAMS: [&str; 2] = ["time", "month"];

/// The context of one request: when, where, what, and request literals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalContext {
    #[serde(with = "rfc3339")]
    pub time: DateTime<Utc>,
    pub jurisdiction_tags: BTreeSet<String>,
    pub request_kind: RequestKind,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
}

impl EvalContext {
    pub fn new<I, S>(time: DateTime<Utc>, tags: I, request_kind: RequestKind) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        EvalContext {
            time,
            jurisdiction_tags: tags.into_iter().map(Into::into).collect(),
            request_kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    /// `context.time` is the UTC calendar date of the request and
    /// `context.month` its `YYYY-MM`; other names come from `params`.
    pub fn param(&self, name: &str) -> Option<Scalar> {
        match name {
            "time" => Some(Scalar::Date(self.time.date_naive())),
            "month" => Some(Scalar::Str(self.time.format("%Y-%m").to_string())),
            _ => self.params.get(name).cloned(),
        }
    }
}
