//! Registry scalars and national identifiers.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A single registry value.
///
/// On the wire a date is a `YYYY-MM-DD` string; any string of exactly that
/// shape deserializes as [`Scalar::Date`]. Schema conformance turns it back
/// into a string for `string`/`national_id` fields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scalar {
    Null,
    Bool(bool),
    Int(i64),
    Date(NaiveDate),
    Str(String),
}

/// Field values of one record, keyed by field name.
pub type Values = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot compare {left} with {right}")]
pub struct TypeMismatch {
    pub left: String,
    pub right: String,
}

impl Scalar {
    pub fn str(s: impl Into<String>) -> Self {
        Scalar::Str(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Scalar::Null)
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Scalar::Null => "null",
            Scalar::Bool(_) => "boolean",
            Scalar::Int(_) => "integer",
            Scalar::Date(_) => "date",
            Scalar::Str(_) => "string",
        }
    }

    /// Orders two non-null scalars of compatible type. Strings compare
    /// against dates when they parse as one.
    pub fn try_cmp(&self, other: &Scalar) -> Result<Ordering, TypeMismatch> {
        match (self, other) {
            (Scalar::Bool(a), Scalar::Bool(b)) => Ok(a.cmp(b)),
            (Scalar::Int(a), Scalar::Int(b)) => Ok(a.cmp(b)),
            (Scalar::Date(a), Scalar::Date(b)) => Ok(a.cmp(b)),
            (Scalar::Str(a), Scalar::Str(b)) => Ok(a.cmp(b)),
            (Scalar::Date(a), Scalar::Str(b)) => match parse_date(b) {
                Some(b) => Ok(a.cmp(&b)),
                None => Err(self.mismatch(other)),
            },
            (Scalar::Str(a), Scalar::Date(b)) => match parse_date(a) {
                Some(a) => Ok(a.cmp(b)),
                None => Err(self.mismatch(other)),
            },
            _ => Err(self.mismatch(other)),
        }
    }

    fn mismatch(&self, other: &Scalar) -> TypeMismatch {
        TypeMismatch {
            left: self.type_name().to_string(),
            right: other.type_name().to_string(),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Null => f.write_str("NULL"),
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Str(s)
    }
}

impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

impl From<NaiveDate> for Scalar {
    fn from(d: NaiveDate) -> Self {
        Scalar::Date(d)
    }
}

impl From<&NationalId> for Scalar {
    fn from(n: &NationalId) -> Self {
        Scalar::Str(n.0.clone())
    }
}

/// Strict `YYYY-MM-DD` parse: the text must re-render identically.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    if s.len() != 10 {
        return None;
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    (d.format("%Y-%m-%d").to_string() == s).then_some(d)
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Null => serializer.serialize_unit(),
            Scalar::Bool(b) => serializer.serialize_bool(*b),
            Scalar::Int(i) => serializer.serialize_i64(*i),
            Scalar::Date(d) => serializer.serialize_str(&d.format("%Y-%m-%d").to_string()),
            Scalar::Str(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScalarVisitor;

        impl<'de> Visitor<'de> for ScalarVisitor {
            type Value = Scalar;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("null, a boolean, an integer or a string")
            }

            fn visit_unit<E>(self) -> Result<Scalar, E> {
                Ok(Scalar::Null)
            }

            fn visit_none<E>(self) -> Result<Scalar, E> {
                Ok(Scalar::Null)
            }

            fn visit_bool<E>(self, v: bool) -> Result<Scalar, E> {
                Ok(Scalar::Bool(v))
            }

            fn visit_i64<E>(self, v: i64) -> Result<Scalar, E> {
                Ok(Scalar::Int(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
                i64::try_from(v)
                    .map(Scalar::Int)
                    .map_err(|_| E::custom("integer out of range"))
            }

            fn visit_f64<E: de::Error>(self, _: f64) -> Result<Scalar, E> {
                Err(E::custom("non-integer numbers are not registry scalars"))
            }

            fn visit_str<E>(self, v: &str) -> Result<Scalar, E> {
                Ok(match parse_date(v) {
                    Some(d) => Scalar::Date(d),
                    None => Scalar::Str(v.to_string()),
                })
            }
        }

        deserializer.deserialize_any(ScalarVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid national id {0:?}: expected 1-64 characters of [A-Za-z0-9_-]")]
pub struct InvalidNationalId(pub String);

/// Identifier of a legal subject (person, company, office).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct NationalId(String);

impl NationalId {
    pub fn new(s: impl Into<String>) -> Result<Self, InvalidNationalId> {
        let s = s.into();
        if is_valid_national_id(&s) {
            Ok(NationalId(s))
        } else {
            Err(InvalidNationalId(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn is_valid_national_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl fmt::Display for NationalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for NationalId {
    type Err = InvalidNationalId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NationalId::new(s)
    }
}

impl AsRef<str> for NationalId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl<'de> Deserialize<'de> for NationalId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        NationalId::new(s).map_err(de::Error::custom)
    }
}

/// Whole years elapsed from `born` to `on`. A 29 February birthday counts
/// as reached on 1 March in common years.
pub fn age_in_years(born: NaiveDate, on: NaiveDate) -> i64 {
    use chrono::Datelike;
    let mut years = i64::from(on.year() - born.year());
    if (on.month(), on.day()) < (born.month(), born.day()) {
        years -= 1;
    }
    years
}
