//! Declarative condition trees used by status, grant, request and access
//! rules, and by registry queries.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Scalar;

pub const MAX_CONDITION_DEPTH: usize = 64;

/// Default binding name for rows in queries and `exists`.
pub const ROW: &str = "row";

/// A reference to a value resolvable at evaluation time.
///
/// Text forms: `subject.<registry>.<field>`, `companion.<registry>.<field>`,
/// `context.<param>`, `<var>.<field>` (a row bound by `exists` or a query)
/// and `age(<date ref>)`, the only derived function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FieldRef {
    Subject { registry: String, field: String },
    Companion { registry: String, field: String },
    Context(String),
    Row { var: String, field: String },
    Age(Box<FieldRef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid field reference {0:?}")]
pub struct BadFieldRef(pub String);

pub(crate) use crate::scalar::is_identifier as is_ident;

const RESERVED_VARS: [&str; 4] = ["subject", "companion", "context", "age"];

pub fn is_reserved_var(s: &str) -> bool {
    RESERVED_VARS.contains(&s)
}

impl FieldRef {
    pub fn row(field: impl Into<String>) -> Self {
        FieldRef::Row {
            var: ROW.to_string(),
            field: field.into(),
        }
    }

    pub fn subject(registry: impl Into<String>, field: impl Into<String>) -> Self {
        FieldRef::Subject {
            registry: registry.into(),
            field: field.into(),
        }
    }

    pub fn context(param: impl Into<String>) -> Self {
        FieldRef::Context(param.into())
    }
}

impl FromStr for FieldRef {
    type Err = BadFieldRef;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadFieldRef(s.to_string());
        if let Some(inner) = s.strip_prefix("age(").and_then(|r| r.strip_suffix(')')) {
            return Ok(FieldRef::Age(Box::new(inner.parse().map_err(|_| bad())?)));
        }
        let (head, rest) = s.split_once('.').ok_or_else(bad)?;
        match head {
            "context" => {
                if rest.is_empty() || !rest.split('.').all(is_ident) {
                    return Err(bad());
                }
                Ok(FieldRef::Context(rest.to_string()))
            }
            "subject" | "companion" => {
                let (registry, field) = rest.split_once('.').ok_or_else(bad)?;
                if !is_ident(registry) || !is_ident(field) {
                    return Err(bad());
                }
                let (registry, field) = (registry.to_string(), field.to_string());
                Ok(if head == "subject" {
                    FieldRef::Subject { registry, field }
                } else {
                    FieldRef::Companion { registry, field }
                })
            }
            var if is_ident(var) && !is_reserved_var(var) && is_ident(rest) => Ok(FieldRef::Row {
                var: var.to_string(),
                field: rest.to_string(),
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldRef::Subject { registry, field } => write!(f, "subject.{registry}.{field}"),
            FieldRef::Companion { registry, field } => write!(f, "companion.{registry}.{field}"),
            FieldRef::Context(p) => write!(f, "context.{p}"),
            FieldRef::Row { var, field } => write!(f, "{var}.{field}"),
            FieldRef::Age(inner) => write!(f, "age({inner})"),
        }
    }
}

impl Serialize for FieldRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FieldRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operand {
    Ref(FieldRef),
    Lit(Scalar),
}

impl From<FieldRef> for Operand {
    fn from(r: FieldRef) -> Self {
        Operand::Ref(r)
    }
}

impl From<Scalar> for Operand {
    fn from(s: Scalar) -> Self {
        Operand::Lit(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

/// Boolean condition tree. `and([])` is true and `or([])` is false.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Cmp {
        left: Operand,
        op: CmpOp,
        right: Operand,
    },
    IsNull(Operand),
    IsNotNull(Operand),
    Exists {
        registry: String,
        #[serde(rename = "as", default = "default_var")]
        var: String,
        #[serde(rename = "where", default = "Condition::boxed_true")]
        filter: Box<Condition>,
    },
    Not(Box<Condition>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    /// Holds when the subject carries this status label. Only meaningful
    /// in grant rules, after statuses are computed.
    Status(String),
}

fn default_var() -> String {
    ROW.to_string()
}

impl Default for Condition {
    fn default() -> Self {
        Condition::always()
    }
}

impl Condition {
    pub fn always() -> Self {
        Condition::And(Vec::new())
    }

    pub fn never() -> Self {
        Condition::Or(Vec::new())
    }

    fn boxed_true() -> Box<Condition> {
        Box::new(Condition::always())
    }

    pub fn cmp(left: impl Into<Operand>, op: CmpOp, right: impl Into<Operand>) -> Self {
        Condition::Cmp {
            left: left.into(),
            op,
            right: right.into(),
        }
    }

    pub fn not(c: Condition) -> Self {
        Condition::Not(Box::new(c))
    }

    pub fn exists(registry: impl Into<String>, var: impl Into<String>, filter: Condition) -> Self {
        Condition::Exists {
            registry: registry.into(),
            var: var.into(),
            filter: Box::new(filter),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Condition::Cmp { .. }
            | Condition::IsNull(_)
            | Condition::IsNotNull(_)
            | Condition::Status(_) => 1,
            Condition::Exists { filter, .. } => 1 + filter.depth(),
            Condition::Not(c) => 1 + c.depth(),
            Condition::And(cs) | Condition::Or(cs) => {
                1 + cs.iter().map(Condition::depth).max().unwrap_or(0)
            }
        }
    }

    /// Visits every field reference, including those nested in `age(..)`.
    pub fn for_each_ref(&self, f: &mut impl FnMut(&FieldRef)) {
        fn operand(o: &Operand, f: &mut impl FnMut(&FieldRef)) {
            if let Operand::Ref(r) = o {
                f(r);
            }
        }
        match self {
            Condition::Cmp { left, right, .. } => {
                operand(left, f);
                operand(right, f);
            }
            Condition::IsNull(o) | Condition::IsNotNull(o) => operand(o, f),
            Condition::Exists { filter, .. } => filter.for_each_ref(f),
            Condition::Not(c) => c.for_each_ref(f),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.for_each_ref(f)),
            Condition::Status(_) => {}
        }
    }

    pub fn for_each_node(&self, f: &mut impl FnMut(&Condition)) {
        f(self);
        match self {
            Condition::Exists { filter, .. } => filter.for_each_node(f),
            Condition::Not(c) => c.for_each_node(f),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.for_each_node(f)),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_ref_text_forms() {
        for s in [
            "subject.pax.sex",
            "companion.pax.sex",
            "context.companion",
            "context.new.child",
            "row.nin",
            "e.empl",
            "age(subject.rc.date_of_birth)",
            "age(c.date_of_birth)",
        ] {
            let r: FieldRef = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        for s in ["subject.pax", "nin", "context.", "age(x)", "subject.a.b.c", "age.x"] {
            assert!(s.parse::<FieldRef>().is_err(), "{s}");
        }
    }

    #[test]
    fn condition_json_shape() {
        let c: Condition = serde_json::from_str(
            r#"{"and":[
                {"cmp":{"left":{"ref":"age(subject.pax.date_of_birth)"},"op":">=","right":{"lit":14}}},
                {"exists":{"registry":"re","as":"e","where":{"cmp":{"left":{"ref":"e.empl"},"op":"=","right":{"ref":"context.subject"}}}}},
                {"is_null":{"ref":"subject.rc.married_to"}},
                {"status":"passenger"}
            ]}"#,
        )
        .unwrap();
        assert_eq!(c.depth(), 3);
        let mut refs = Vec::new();
        c.for_each_ref(&mut |r| refs.push(r.to_string()));
        assert_eq!(refs.len(), 4);
    }

    #[test]
    fn exists_defaults() {
        let c: Condition = serde_json::from_str(r#"{"exists":{"registry":"re"}}"#).unwrap();
        assert_eq!(c, Condition::exists("re", "row", Condition::always()));
    }
}
