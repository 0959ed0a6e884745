//! Condition interpreter.

use std::collections::BTreeSet;

use thiserror::Error;

use super::condition::{Condition, FieldRef, Operand, MAX_CONDITION_DEPTH};
use super::context::EvalContext;
use crate::scalar::{age_in_years, parse_date, Scalar, TypeMismatch, Values};
use crate::store::StoreView;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unresolvable field {0}")]
    UnresolvableField(String),
    #[error("missing context parameter {0}")]
    MissingContextParam(String),
    #[error(transparent)]
    TypeMismatch(#[from] TypeMismatch),
    #[error("status {0} is not available at this stage")]
    StatusUnavailable(String),
    #[error("condition nesting exceeds {MAX_CONDITION_DEPTH}")]
    TooDeep,
}

/// What a condition can see. Queries run with neither subject nor
/// context; frame rules run with both.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub view: &'a StoreView,
    pub subject: Option<&'a str>,
    pub ctx: Option<&'a EvalContext>,
    pub statuses: Option<&'a BTreeSet<String>>,
}

type Bindings<'c, 'a> = Vec<(&'c str, &'a Values)>;

impl<'a> Scope<'a> {
    pub fn rows_only(view: &'a StoreView) -> Self {
        Scope {
            view,
            subject: None,
            ctx: None,
            statuses: None,
        }
    }

    pub fn for_subject(view: &'a StoreView, subject: &'a str, ctx: &'a EvalContext) -> Self {
        Scope {
            view,
            subject: Some(subject),
            ctx: Some(ctx),
            statuses: None,
        }
    }

    pub fn with_statuses(mut self, statuses: &'a BTreeSet<String>) -> Self {
        self.statuses = Some(statuses);
        self
    }

    pub fn eval(&self, cond: &Condition) -> Result<bool, EvalError> {
        self.eval_in(cond, &mut Vec::new(), 0)
    }

    /// Evaluates `cond` with `row` bound to `var`.
    pub fn eval_row(&self, cond: &Condition, var: &str, row: &'a Values) -> Result<bool, EvalError> {
        self.eval_in(cond, &mut vec![(var, row)], 0)
    }

    fn eval_in<'c>(
        &self,
        cond: &'c Condition,
        bindings: &mut Bindings<'c, 'a>,
        depth: usize,
    ) -> Result<bool, EvalError> {
        if depth >= MAX_CONDITION_DEPTH {
            return Err(EvalError::TooDeep);
        }
        match cond {
            Condition::Cmp { left, op, right } => {
                let l = self.operand(left, bindings)?;
                let r = self.operand(right, bindings)?;
                if l.is_null() || r.is_null() {
                    return Ok(false);
                }
                Ok(op.holds(l.try_cmp(&r)?))
            }
            Condition::IsNull(o) => Ok(self.presence(o, bindings)?.is_null()),
            Condition::IsNotNull(o) => Ok(!self.presence(o, bindings)?.is_null()),
            Condition::Exists {
                registry,
                var,
                filter,
            } => {
                let reg = self
                    .view
                    .registry(registry)
                    .ok_or_else(|| EvalError::UnresolvableField(format!("registry {registry}")))?;
                for row in reg.rows.values() {
                    bindings.push((var.as_str(), row));
                    let hit = self.eval_in(filter, bindings, depth + 1);
                    bindings.pop();
                    if hit? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Condition::Not(c) => Ok(!self.eval_in(c, bindings, depth + 1)?),
            Condition::And(cs) => {
                for c in cs {
                    if !self.eval_in(c, bindings, depth + 1)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Condition::Or(cs) => {
                for c in cs {
                    if self.eval_in(c, bindings, depth + 1)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Condition::Status(label) => self
                .statuses
                .map(|s| s.contains(label))
                .ok_or_else(|| EvalError::StatusUnavailable(label.clone())),
        }
    }

    /// Like `operand`, but an absent context parameter reads as null, so
    /// rules can guard on parameters only some requests carry.
    fn presence(&self, o: &Operand, bindings: &Bindings<'_, 'a>) -> Result<Scalar, EvalError> {
        match (o, self.ctx) {
            (Operand::Ref(FieldRef::Context(p)), Some(ctx)) => Ok(ctx.param(p).unwrap_or(Scalar::Null)),
            _ => self.operand(o, bindings),
        }
    }

    fn operand(&self, o: &Operand, bindings: &Bindings<'_, 'a>) -> Result<Scalar, EvalError> {
        match o {
            Operand::Lit(v) => Ok(v.clone()),
            Operand::Ref(r) => self.resolve(r, bindings),
        }
    }

    pub fn resolve(&self, r: &FieldRef, bindings: &Bindings<'_, 'a>) -> Result<Scalar, EvalError> {
        let unresolvable = || EvalError::UnresolvableField(r.to_string());
        match r {
            FieldRef::Subject { registry, field } => {
                let subject = self.subject.ok_or_else(unresolvable)?;
                self.lookup(registry, field, subject).ok_or_else(unresolvable)
            }
            FieldRef::Companion { registry, field } => {
                let ctx = self.ctx.ok_or_else(unresolvable)?;
                let companion = ctx
                    .params
                    .get("companion")
                    .ok_or_else(|| EvalError::MissingContextParam("companion".into()))?;
                match companion {
                    Scalar::Null => {
                        // no companion: every companion field reads as null
                        self.lookup(registry, field, "").ok_or_else(unresolvable)
                    }
                    Scalar::Str(id) => self.lookup(registry, field, id).ok_or_else(unresolvable),
                    _ => Err(unresolvable()),
                }
            }
            FieldRef::Context(p) => {
                let ctx = self.ctx.ok_or_else(unresolvable)?;
                ctx.param(p)
                    .ok_or_else(|| EvalError::MissingContextParam(p.clone()))
            }
            FieldRef::Row { var, field } => {
                let (_, row) = bindings
                    .iter()
                    .rev()
                    .find(|(v, _)| v == var)
                    .ok_or_else(unresolvable)?;
                row.get(field).cloned().ok_or_else(unresolvable)
            }
            FieldRef::Age(inner) => {
                let ctx = self.ctx.ok_or_else(unresolvable)?;
                let born = match self.resolve(inner, bindings)? {
                    Scalar::Null => return Ok(Scalar::Null),
                    Scalar::Date(d) => d,
                    Scalar::Str(s) => parse_date(&s).ok_or_else(|| TypeMismatch {
                        left: "string".into(),
                        right: "date".into(),
                    })?,
                    other => {
                        return Err(TypeMismatch {
                            left: other.type_name().into(),
                            right: "date".into(),
                        }
                        .into())
                    }
                };
                Ok(Scalar::Int(age_in_years(born, ctx.time.date_naive())))
            }
        }
    }

    /// Field of the record keyed `key`; `Some(Null)` when the record is
    /// absent, `None` when the registry or field does not exist.
    fn lookup(&self, registry: &str, field: &str, key: &str) -> Option<Scalar> {
        let reg = self.view.registry(registry)?;
        reg.schema.field(field)?;
        Some(
            reg.rows
                .get(key)
                .and_then(|row| row.get(field).cloned())
                .unwrap_or(Scalar::Null),
        )
    }
}

/// Evaluates a condition for a subject under a context.
pub fn eval_condition(
    cond: &Condition,
    subject_id: &str,
    view: &StoreView,
    ctx: &EvalContext,
) -> Result<bool, EvalError> {
    Scope::for_subject(view, subject_id, ctx).eval(cond)
}
