use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::{Command, CommandAst, Pred};
use crate::calculus::{CmpOp, RequestKind};
use crate::scalar::{NationalId, Scalar};
use crate::store::RegistrySchema;

/// A command turned into a gated request: the kind the frame's access rules
/// speak to, who asks, and the literals context conditions may inspect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub request_kind: RequestKind,
    pub subject: NationalId,
    pub params: BTreeMap<String, Scalar>,
}

fn key_param(key: &Scalar) -> Scalar {
    match key {
        Scalar::Date(_) => Scalar::Str(key.to_string()),
        other => other.clone(),
    }
}

/// Top-level `field = literal` conjuncts of a selection.
fn equalities(p: &Pred, out: &mut BTreeMap<String, Scalar>) {
    match p {
        Pred::Cmp {
            field,
            op: CmpOp::Eq,
            value,
        } => {
            out.insert(field.clone(), value.clone());
        }
        Pred::And(ps) => ps.iter().for_each(|p| equalities(p, out)),
        _ => {}
    }
}

/// Derives the request kind and parameters of a command.
///
/// * `READ r` → `read(r)` with `where.<f>` for every top-level equality and
///   `key` when one of them is on the key field;
/// * `INSERT r` → `insert(r)` with `new.<f>` per value and `key`;
/// * `UPDATE r` → `write(r, <fields set>)` with `key` and `new.<f>`;
/// * `DELETE r` → `delete(r)` with `key`.
///
/// The schema is only consulted to name the key field.
pub fn map_to_request(ast: &CommandAst, requester: &NationalId, schema: Option<&RegistrySchema>) -> RequestSpec {
    let mut params = BTreeMap::new();
    let key_field = schema.map(|s| s.key_field.as_str());
    let request_kind = match &ast.command {
        Command::Read {
            registry,
            selection,
            ..
        } => {
            let mut eqs = BTreeMap::new();
            equalities(selection, &mut eqs);
            for (f, v) in eqs {
                if Some(f.as_str()) == key_field {
                    params.insert("key".to_string(), key_param(&v));
                }
                params.insert(format!("where.{f}"), v);
            }
            RequestKind::Read(registry.clone())
        }
        Command::Insert { registry, values } => {
            for (f, v) in values {
                if Some(f.as_str()) == key_field {
                    params.insert("key".to_string(), key_param(v));
                }
                params.insert(format!("new.{f}"), v.clone());
            }
            RequestKind::Insert(registry.clone())
        }
        Command::Update { registry, key, set } => {
            params.insert("key".to_string(), key_param(key));
            for (f, v) in set {
                params.insert(format!("new.{f}"), v.clone());
            }
            let fields: BTreeSet<String> = set.keys().cloned().collect();
            RequestKind::Write(registry.clone(), fields)
        }
        Command::Delete { registry, key } => {
            params.insert("key".to_string(), key_param(key));
            RequestKind::Delete(registry.clone())
        }
    };
    RequestSpec {
        request_kind,
        subject: requester.clone(),
        params,
    }
}
