use super::view::StoreView;
use super::StoreError;
use crate::calculus::{CmpOp, Condition, FieldRef, Operand, Scope, ROW};
use crate::scalar::{Scalar, Values};

/// Rows of `registry` satisfying `selection`, projected onto `projection`
/// (all fields when empty), in key order.
///
/// The selection sees each row as `row.<field>`; it may use `exists` over
/// other registries but no subject, companion or context references.
pub fn query(
    view: &StoreView,
    registry: &str,
    selection: &Condition,
    projection: &[String],
) -> Result<Vec<Values>, StoreError> {
    let reg = view
        .registry(registry)
        .ok_or_else(|| StoreError::UnknownRegistry(registry.to_string()))?;
    if let Some(f) = projection.iter().find(|f| reg.schema.field(f).is_none()) {
        return Err(StoreError::UnknownField(format!("{registry}.{f}")));
    }
    check_selection(view, registry, selection)?;

    let scope = Scope::rows_only(view);
    let project = |row: &Values| -> Values {
        if projection.is_empty() {
            row.clone()
        } else {
            projection.iter().map(|f| (f.clone(), row[f].clone())).collect()
        }
    };

    if let Some(key) = key_lookup(selection, &reg.schema.key_field) {
        let Some(row) = reg.rows.get(key) else {
            return Ok(Vec::new());
        };
        return Ok(if scope.eval_row(selection, ROW, row)? {
            vec![project(row)]
        } else {
            Vec::new()
        });
    }

    let mut out = Vec::new();
    for row in reg.rows.values() {
        if scope.eval_row(selection, ROW, row)? {
            out.push(project(row));
        }
    }
    Ok(out)
}

/// A top-level `row.<key> = 'literal'` conjunct pins the result to one row.
fn key_lookup<'c>(selection: &'c Condition, key_field: &str) -> Option<&'c str> {
    let is_key = |r: &FieldRef| matches!(r, FieldRef::Row { var, field } if var == ROW && field == key_field);
    match selection {
        Condition::Cmp {
            left,
            op: CmpOp::Eq,
            right,
        } => match (left, right) {
            (Operand::Ref(r), Operand::Lit(Scalar::Str(k)))
            | (Operand::Lit(Scalar::Str(k)), Operand::Ref(r))
                if is_key(r) =>
            {
                Some(k)
            }
            _ => None,
        },
        Condition::And(cs) => cs.iter().find_map(|c| key_lookup(c, key_field)),
        _ => None,
    }
}

fn check_selection(view: &StoreView, registry: &str, selection: &Condition) -> Result<(), StoreError> {
    fn walk(view: &StoreView, cond: &Condition, bound: &mut Vec<(String, String)>) -> Result<(), StoreError> {
        match cond {
            Condition::Exists {
                registry,
                var,
                filter,
            } => {
                if view.registry(registry).is_none() {
                    return Err(StoreError::UnknownRegistry(registry.clone()));
                }
                bound.push((var.clone(), registry.clone()));
                let res = walk(view, filter, bound);
                bound.pop();
                res
            }
            Condition::Not(c) => walk(view, c, bound),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().try_for_each(|c| walk(view, c, bound)),
            Condition::Status(s) => Err(StoreError::UnknownField(format!("status {s}"))),
            leaf => {
                let mut res = Ok(());
                leaf.for_each_ref(&mut |r| {
                    let err = match r {
                        FieldRef::Row { var, field } => match bound.iter().rev().find(|(v, _)| v == var) {
                            Some((_, reg)) if view.schema(reg).and_then(|s| s.field(field)).is_some() => None,
                            Some((_, reg)) => Some(format!("{reg}.{field}")),
                            None => Some(r.to_string()),
                        },
                        other => Some(other.to_string()),
                    };
                    if let (Some(e), Ok(())) = (err, &res) {
                        res = Err(StoreError::UnknownField(e));
                    }
                });
                res
            }
        }
    }
    walk(view, selection, &mut vec![(ROW.to_string(), registry.to_string())])
}
