//! Legal frames: versioned, jurisdiction- and time-scoped rule sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::atom::EligibilityAtom;
use super::condition::{is_ident, is_reserved_var, Condition, FieldRef, MAX_CONDITION_DEPTH};
use crate::canonical::{self, rfc3339, Digest};
use crate::store::StoreView;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRule {
    pub rule_id: String,
    pub status_label: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantRule {
    pub rule_id: String,
    /// Boolean combination of `status` leaves, optionally with data
    /// conditions (companion checks, payment records).
    pub requires_statuses: Condition,
    pub grants: Vec<EligibilityAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRule {
    pub rule_id: String,
    pub request_kind: RequestKind,
    #[serde(default)]
    pub context_condition: Condition,
    pub requires: Vec<EligibilityAtom>,
}

/// A request kind: either a named action (`enter_sauna`) or a data access
/// kind derived from a command (`read(rc)`, `write(rc,adr)`, `insert(x)`,
/// `delete(x)`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RequestKind {
    Named(String),
    Read(String),
    Insert(String),
    Delete(String),
    Write(String, BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid request kind {0:?}")]
pub struct BadRequestKind(pub String);

impl RequestKind {
    pub fn is_access(&self) -> bool {
        !matches!(self, RequestKind::Named(_))
    }

    pub fn registry(&self) -> Option<&str> {
        match self {
            RequestKind::Named(_) => None,
            RequestKind::Read(r)
            | RequestKind::Insert(r)
            | RequestKind::Delete(r)
            | RequestKind::Write(r, _) => Some(r),
        }
    }

    /// Whether a rule declared for `self` speaks to `request`. Write rules
    /// match a request touching any of their fields.
    pub fn covers(&self, request: &RequestKind) -> bool {
        match (self, request) {
            (RequestKind::Write(r1, f1), RequestKind::Write(r2, f2)) => {
                r1 == r2 && !f1.is_disjoint(f2)
            }
            _ => self == request,
        }
    }
}

impl FromStr for RequestKind {
    type Err = BadRequestKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadRequestKind(s.to_string());
        let Some((head, rest)) = s.split_once('(') else {
            return if is_ident(s) {
                Ok(RequestKind::Named(s.to_string()))
            } else {
                Err(bad())
            };
        };
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').collect();
        if !args.iter().all(|a| is_ident(a)) {
            return Err(bad());
        }
        let registry = args[0].to_string();
        match (head, args.len()) {
            ("read", 1) => Ok(RequestKind::Read(registry)),
            ("insert", 1) => Ok(RequestKind::Insert(registry)),
            ("delete", 1) => Ok(RequestKind::Delete(registry)),
            ("write", n) if n >= 2 => {
                let fields: BTreeSet<String> = args[1..].iter().map(|f| f.to_string()).collect();
                if fields.len() != n - 1 {
                    return Err(bad());
                }
                Ok(RequestKind::Write(registry, fields))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestKind::Named(n) => f.write_str(n),
            RequestKind::Read(r) => write!(f, "read({r})"),
            RequestKind::Insert(r) => write!(f, "insert({r})"),
            RequestKind::Delete(r) => write!(f, "delete({r})"),
            RequestKind::Write(r, fields) => {
                write!(f, "write({r}")?;
                for field in fields {
                    write!(f, ",{field}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Serialize for RequestKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RequestKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalFrame {
    pub frame_id: String,
    pub community_id: String,
    pub version: u64,
    #[serde(with = "rfc3339")]
    pub valid_from: DateTime<Utc>,
    #[serde(with = "rfc3339")]
    pub valid_to: DateTime<Utc>,
    pub jurisdiction_tags: BTreeSet<String>,
    pub priority: i64,
    /// Atom vocabulary: every granted or demanded atom name.
    pub atoms: BTreeSet<String>,
    /// Request vocabulary: every kind a request or access rule may name.
    pub request_kinds: BTreeSet<RequestKind>,
    #[serde(default)]
    pub status_rules: Vec<StatusRule>,
    #[serde(default)]
    pub grant_rules: Vec<GrantRule>,
    #[serde(default)]
    pub request_rules: Vec<RequestRule>,
    #[serde(default)]
    pub access_rules: Vec<RequestRule>,
    /// Authoring notes carried with the frame (part of its digest).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Identity of the frame a decision was made under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_id: String,
    pub version: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame document is not valid: {0}")]
    Parse(String),
    #[error("frame {frame}: {reason}")]
    Invalid { frame: String, reason: String },
    #[error("frame {frame_id} version {version} is not newer than loaded version {loaded}")]
    VersionNotIncreasing {
        frame_id: String,
        version: u64,
        loaded: u64,
    },
}

impl LegalFrame {
    pub fn from_json(bytes: &[u8]) -> Result<Self, FrameError> {
        let frame: LegalFrame =
            serde_json::from_slice(bytes).map_err(|e| FrameError::Parse(e.to_string()))?;
        frame.validate()?;
        Ok(frame)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("frames contain no floats")
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn frame_ref(&self) -> FrameRef {
        FrameRef {
            frame_id: self.frame_id.clone(),
            version: self.version,
            digest: self.digest(),
        }
    }

    pub fn is_valid_at(&self, t: DateTime<Utc>) -> bool {
        self.valid_from <= t && t < self.valid_to
    }

    pub fn status_labels(&self) -> BTreeSet<&str> {
        self.status_rules.iter().map(|r| r.status_label.as_str()).collect()
    }

    fn invalid(&self, reason: impl Into<String>) -> FrameError {
        FrameError::Invalid {
            frame: format!("{}@{}", self.frame_id, self.version),
            reason: reason.into(),
        }
    }

    /// Structural checks that need no registry schemas.
    pub fn validate(&self) -> Result<(), FrameError> {
        if !is_ident(&self.frame_id) {
            return Err(self.invalid("frame_id must be an identifier"));
        }
        if self.valid_from >= self.valid_to {
            return Err(self.invalid("valid_from must precede valid_to"));
        }
        if self.jurisdiction_tags.is_empty() {
            return Err(self.invalid("jurisdiction_tags must not be empty"));
        }

        let mut ids = BTreeSet::new();
        let all_ids = self
            .status_rules
            .iter()
            .map(|r| &r.rule_id)
            .chain(self.grant_rules.iter().map(|r| &r.rule_id))
            .chain(self.request_rules.iter().map(|r| &r.rule_id))
            .chain(self.access_rules.iter().map(|r| &r.rule_id));
        for id in all_ids {
            if !ids.insert(id) {
                return Err(self.invalid(format!("duplicate rule id {id}")));
            }
        }

        let labels = self.status_labels();
        for rule in &self.status_rules {
            self.check_condition(&rule.rule_id, &rule.condition, false)?;
            if !is_ident(&rule.status_label) {
                return Err(self.invalid(format!("{}: bad status label", rule.rule_id)));
            }
        }
        for rule in &self.grant_rules {
            self.check_condition(&rule.rule_id, &rule.requires_statuses, true)?;
            let mut unknown = None;
            rule.requires_statuses.for_each_node(&mut |c| {
                if let Condition::Status(l) = c {
                    if !labels.contains(l.as_str()) {
                        unknown = Some(l.clone());
                    }
                }
            });
            if let Some(l) = unknown {
                return Err(self.invalid(format!("{}: undeclared status {l}", rule.rule_id)));
            }
            if rule.grants.is_empty() {
                return Err(self.invalid(format!("{}: grants must not be empty", rule.rule_id)));
            }
            self.check_atoms(&rule.rule_id, &rule.grants)?;
        }
        for (rule, access) in self
            .request_rules
            .iter()
            .map(|r| (r, false))
            .chain(self.access_rules.iter().map(|r| (r, true)))
        {
            if access != rule.request_kind.is_access() {
                return Err(self.invalid(format!(
                    "{}: {} belongs in {}",
                    rule.rule_id,
                    rule.request_kind,
                    if access { "request_rules" } else { "access_rules" }
                )));
            }
            if !self.request_kinds.contains(&rule.request_kind) {
                return Err(self.invalid(format!(
                    "{}: request kind {} not declared",
                    rule.rule_id, rule.request_kind
                )));
            }
            self.check_condition(&rule.rule_id, &rule.context_condition, false)?;
            let mut non_context = None;
            rule.context_condition.for_each_ref(&mut |r| {
                if !matches!(r, FieldRef::Context(_)) {
                    non_context = Some(r.to_string());
                }
            });
            rule.context_condition.for_each_node(&mut |c| {
                if let Condition::Exists { registry, .. } = c {
                    non_context = Some(format!("exists({registry})"));
                }
            });
            if let Some(r) = non_context {
                return Err(self.invalid(format!(
                    "{}: context conditions may only use context params, found {r}",
                    rule.rule_id
                )));
            }
            self.check_atoms(&rule.rule_id, &rule.requires)?;
        }
        Ok(())
    }

    fn check_atoms(&self, rule_id: &str, atoms: &[EligibilityAtom]) -> Result<(), FrameError> {
        for atom in atoms {
            if !self.atoms.contains(&atom.name) {
                return Err(self.invalid(format!("{rule_id}: atom {} not declared", atom.name)));
            }
        }
        Ok(())
    }

    fn check_condition(
        &self,
        rule_id: &str,
        cond: &Condition,
        status_allowed: bool,
    ) -> Result<(), FrameError> {
        if cond.depth() > MAX_CONDITION_DEPTH {
            return Err(self.invalid(format!("{rule_id}: condition too deep")));
        }
        let mut problem = None;
        cond.for_each_node(&mut |c| match c {
            Condition::Status(_) if !status_allowed => {
                problem = Some("status leaves are only allowed in grant rules".to_string())
            }
            Condition::Exists { var, registry, .. } if is_reserved_var(var) || !is_ident(registry) => {
                problem = Some(format!("bad exists binding {var} over {registry}"))
            }
            _ => {}
        });
        cond.for_each_ref(&mut |r| {
            if let FieldRef::Age(inner) = r {
                if matches!(**inner, FieldRef::Age(_) | FieldRef::Context(_)) {
                    problem = Some(format!("age() needs a stored date field, got {inner}"));
                }
            }
        });
        match problem {
            Some(p) => Err(self.invalid(format!("{rule_id}: {p}"))),
            None => Ok(()),
        }
    }

    /// Checks every registry field reference against the schemas visible in
    /// `view`, including row variables bound by `exists`.
    pub fn check_against(&self, view: &StoreView) -> Result<(), FrameError> {
        let conditions = self
            .status_rules
            .iter()
            .map(|r| (&r.rule_id, &r.condition))
            .chain(self.grant_rules.iter().map(|r| (&r.rule_id, &r.requires_statuses)));
        for (rule_id, cond) in conditions {
            check_refs(cond, view, &mut BTreeMap::new())
                .map_err(|reason| self.invalid(format!("{rule_id}: {reason}")))?;
        }
        for rule in self.access_rules.iter() {
            let registry = rule.request_kind.registry().unwrap_or_default();
            let schema = view
                .schema(registry)
                .ok_or_else(|| self.invalid(format!("{}: unknown registry {registry}", rule.rule_id)))?;
            if let RequestKind::Write(_, fields) = &rule.request_kind {
                if let Some(f) = fields.iter().find(|f| schema.field(f).is_none()) {
                    return Err(self.invalid(format!("{}: unknown field {registry}.{f}", rule.rule_id)));
                }
            }
        }
        Ok(())
    }
}

fn check_refs<'a>(
    cond: &'a Condition,
    view: &StoreView,
    bound: &mut BTreeMap<&'a str, &'a str>,
) -> Result<(), String> {
    let field_ok = |registry: &str, field: &str| -> Result<(), String> {
        let schema = view
            .schema(registry)
            .ok_or_else(|| format!("unknown registry {registry}"))?;
        schema
            .field(field)
            .map(|_| ())
            .ok_or_else(|| format!("unknown field {registry}.{field}"))
    };
    match cond {
        Condition::Exists {
            registry,
            var,
            filter,
        } => {
            if view.schema(registry).is_none() {
                return Err(format!("unknown registry {registry}"));
            }
            let shadowed = bound.insert(var.as_str(), registry.as_str());
            let res = check_refs(filter, view, bound);
            match shadowed {
                Some(prev) => bound.insert(var.as_str(), prev),
                None => bound.remove(var.as_str()),
            };
            res
        }
        Condition::Not(c) => check_refs(c, view, bound),
        Condition::And(cs) | Condition::Or(cs) => {
            cs.iter().try_for_each(|c| check_refs(c, view, bound))
        }
        leaf => {
            let mut result = Ok(());
            leaf.for_each_ref(&mut |r| {
                let mut r = r;
                while let FieldRef::Age(inner) = r {
                    r = inner;
                }
                let res = match r {
                    FieldRef::Subject { registry, field }
                    | FieldRef::Companion { registry, field } => field_ok(registry, field),
                    FieldRef::Row { var, field } => match bound.get(var.as_str()) {
                        Some(registry) => field_ok(registry, field),
                        None => Err(format!("unbound row variable {var}")),
                    },
                    FieldRef::Context(_) | FieldRef::Age(_) => Ok(()),
                };
                if result.is_ok() {
                    result = res;
                }
            });
            result
        }
    }
}

/// All loaded frames. Frame versions strictly increase per `frame_id`.
#[derive(Debug, Clone, Default)]
pub struct FrameSet {
    frames: Vec<LegalFrame>,
}

impl FrameSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&mut self, frame: LegalFrame) -> Result<(), FrameError> {
        frame.validate()?;
        if let Some(loaded) = self
            .frames
            .iter()
            .filter(|f| f.frame_id == frame.frame_id)
            .map(|f| f.version)
            .max()
        {
            if frame.version <= loaded {
                return Err(FrameError::VersionNotIncreasing {
                    frame_id: frame.frame_id,
                    version: frame.version,
                    loaded,
                });
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn as_slice(&self) -> &[LegalFrame] {
        &self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `frame_id@version` of every loaded frame, sorted.
    pub fn versions(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .frames
            .iter()
            .map(|f| format!("{}@{}", f.frame_id, f.version))
            .collect();
        v.sort();
        v
    }
}

impl FromIterator<LegalFrame> for FrameSet {
    fn from_iter<I: IntoIterator<Item = LegalFrame>>(iter: I) -> Self {
        FrameSet {
            frames: iter.into_iter().collect(),
        }
    }
}
