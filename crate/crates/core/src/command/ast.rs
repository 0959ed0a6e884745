use std::fmt::{self, Write as _};

use crate::calculus::{CmpOp, Condition, FieldRef, Operand};
use crate::canonical::Digest;
use crate::scalar::{Scalar, Values};

/// Selection predicate of a `READ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pred {
    True,
    False,
    Cmp { field: String, op: CmpOp, value: Scalar },
    IsNull(String),
    IsNotNull(String),
    And(Vec<Pred>),
    Or(Vec<Pred>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Read {
        registry: String,
        fields: Vec<String>,
        selection: Pred,
    },
    Insert {
        registry: String,
        values: Values,
    },
    Update {
        registry: String,
        key: Scalar,
        set: Values,
    },
    Delete {
        registry: String,
        key: Scalar,
    },
}

/// A parsed command together with its source and the SHA-256 of the
/// source bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandAst {
    pub command: Command,
    pub source_text: String,
    pub digest: Digest,
}

impl Command {
    pub fn registry(&self) -> &str {
        match self {
            Command::Read { registry, .. }
            | Command::Insert { registry, .. }
            | Command::Update { registry, .. }
            | Command::Delete { registry, .. } => registry,
        }
    }

    pub fn is_write(&self) -> bool {
        !matches!(self, Command::Read { .. })
    }

    /// Canonical text of the command; parses back to an equal command.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl Pred {
    pub fn to_condition(&self) -> Condition {
        let row = |f: &str| Operand::Ref(FieldRef::row(f));
        match self {
            Pred::True => Condition::always(),
            Pred::False => Condition::never(),
            Pred::Cmp { field, op, value } => Condition::cmp(row(field), *op, Operand::Lit(value.clone())),
            Pred::IsNull(f) => Condition::IsNull(row(f)),
            Pred::IsNotNull(f) => Condition::IsNotNull(row(f)),
            Pred::And(ps) => Condition::And(ps.iter().map(Pred::to_condition).collect()),
            Pred::Or(ps) => Condition::Or(ps.iter().map(Pred::to_condition).collect()),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Pred::And(ps) | Pred::Or(ps) => 1 + ps.iter().map(Pred::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Pred::True => out.push_str("TRUE"),
            Pred::False => out.push_str("FALSE"),
            Pred::Cmp { field, op, value } => {
                let _ = write!(out, "{field} {} {}", op.symbol(), Literal(value));
            }
            Pred::IsNull(f) => {
                let _ = write!(out, "{f} IS NULL");
            }
            Pred::IsNotNull(f) => {
                let _ = write!(out, "{f} IS NOT NULL");
            }
            Pred::And(ps) | Pred::Or(ps) => {
                let sep = if matches!(self, Pred::And(_)) { " AND " } else { " OR " };
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        out.push_str(sep);
                    }
                    if matches!(p, Pred::And(_) | Pred::Or(_)) {
                        out.push('(');
                        p.render_into(out);
                        out.push(')');
                    } else {
                        p.render_into(out);
                    }
                }
            }
        }
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render_into(&mut s);
        f.write_str(&s)
    }
}

/// A scalar in command syntax.
pub struct Literal<'a>(pub &'a Scalar);

impl fmt::Display for Literal<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Scalar::Null => f.write_str("NULL"),
            Scalar::Bool(true) => f.write_str("TRUE"),
            Scalar::Bool(false) => f.write_str("FALSE"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Scalar::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

fn kvlist(values: &Values) -> String {
    values
        .iter()
        .map(|(k, v)| format!("{k} = {}", Literal(v)))
        .collect::<Vec<_>>()
        .join(", ")
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Read {
                registry,
                fields,
                selection,
            } => write!(f, "READ {registry} FIELDS {} WHERE {selection}", fields.join(", ")),
            Command::Insert { registry, values } => {
                write!(f, "INSERT {registry} VALUES ({})", kvlist(values))
            }
            Command::Update { registry, key, set } => {
                write!(f, "UPDATE {registry} KEY {} SET {}", Literal(key), kvlist(set))
            }
            Command::Delete { registry, key } => write!(f, "DELETE {registry} KEY {}", Literal(key)),
        }
    }
}
