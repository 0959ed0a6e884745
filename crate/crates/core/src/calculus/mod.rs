//! The eligibility calculus.
//!
//! A request is decided in one step: pick the frame in force, compute the
//! subject's statuses from registry data, derive the bundle of rights those
//! statuses (and the context) grant, derive the set of rights the request
//! requires, and permit iff the required set is contained in the bundle.

mod atom;
mod condition;
mod context;
mod decision;
mod eval;
mod frame;

use std::collections::BTreeSet;

use thiserror::Error;

pub use atom::{Bundle, EligibilityAtom, RequiredSet};
pub use condition::{BadFieldRef, CmpOp, Condition, FieldRef, Operand, MAX_CONDITION_DEPTH, ROW};
pub use context::{EvalContext, DERIVED_PARAMS};
pub use decision::{Decision, DecisionError, RuleFiring, Stage};
pub use eval::{eval_condition, EvalError, Scope};
pub use frame::{
    BadRequestKind, FrameError, FrameRef, FrameSet, GrantRule, LegalFrame, RequestKind,
    RequestRule, StatusRule,
};

use crate::scalar::Scalar;
use crate::store::StoreView;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalculusError {
    #[error("no frame applies at {time} for jurisdictions {tags:?}")]
    NoApplicableFrame { time: String, tags: Vec<String> },
    #[error("frames {0:?} tie on priority")]
    AmbiguousFrame(Vec<String>),
    #[error("request kind {0} is not declared by the frame")]
    UnknownRequestKind(String),
    #[error("no rule for {0} applies in this context")]
    NoApplicableRule(String),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("rule {rule_id}: {source}")]
    Rule { rule_id: String, source: EvalError },
}

impl CalculusError {
    pub fn code(&self) -> &'static str {
        match self {
            CalculusError::NoApplicableFrame { .. } => "NO_APPLICABLE_FRAME",
            CalculusError::AmbiguousFrame(_) => "AMBIGUOUS_FRAME",
            CalculusError::UnknownRequestKind(_) => "UNKNOWN_REQUEST_KIND",
            CalculusError::NoApplicableRule(_) => "NO_APPLICABLE_RULE",
            CalculusError::InvalidContext(_) => "INVALID_CONTEXT",
            CalculusError::Rule { source, .. } => match source {
                EvalError::UnresolvableField(_) => "UNRESOLVABLE_FIELD",
                EvalError::MissingContextParam(_) => "MISSING_CONTEXT_PARAM",
                EvalError::TypeMismatch(_) => "TYPE_MISMATCH",
                EvalError::StatusUnavailable(_) => "STATUS_UNAVAILABLE",
                EvalError::TooDeep => "CONDITION_TOO_DEEP",
            },
        }
    }
}

fn rule_err(rule_id: &str) -> impl FnOnce(EvalError) -> CalculusError + '_ {
    move |source| CalculusError::Rule {
        rule_id: rule_id.to_string(),
        source,
    }
}

/// Picks the frame in force: valid at `ctx.time`, sharing a jurisdiction
/// tag with the context, highest priority. A newer version of a frame
/// supersedes older versions that are also valid; a priority tie between
/// different frames is an authoring defect and is reported, not resolved.
pub fn select_frame<'a>(frames: &'a [LegalFrame], ctx: &EvalContext) -> Result<&'a LegalFrame, CalculusError> {
    let mut applicable: Vec<&LegalFrame> = frames
        .iter()
        .filter(|f| f.is_valid_at(ctx.time) && !f.jurisdiction_tags.is_disjoint(&ctx.jurisdiction_tags))
        .collect();
    let superseded: BTreeSet<(String, u64)> = applicable
        .iter()
        .flat_map(|f| {
            applicable
                .iter()
                .filter(|g| g.frame_id == f.frame_id && g.version > f.version)
                .map(|_| (f.frame_id.clone(), f.version))
        })
        .collect();
    applicable.retain(|f| !superseded.contains(&(f.frame_id.clone(), f.version)));

    let top = applicable.iter().map(|f| f.priority).max().ok_or_else(|| {
        CalculusError::NoApplicableFrame {
            time: crate::canonical::rfc3339::format(&ctx.time),
            tags: ctx.jurisdiction_tags.iter().cloned().collect(),
        }
    })?;
    let mut best: Vec<&LegalFrame> = applicable.into_iter().filter(|f| f.priority == top).collect();
    if best.len() > 1 {
        let mut ids: Vec<String> = best.iter().map(|f| format!("{}@{}", f.frame_id, f.version)).collect();
        ids.sort();
        return Err(CalculusError::AmbiguousFrame(ids));
    }
    Ok(best.remove(0))
}

struct Tracer<'t> {
    trace: Option<&'t mut Vec<RuleFiring>>,
}

impl Tracer<'_> {
    fn record(&mut self, rule_id: &str, stage: Stage, holds: bool) {
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(RuleFiring {
                rule_id: rule_id.to_string(),
                stage,
                holds,
            });
        }
    }
}

/// Labels of every status rule whose condition holds for the subject.
pub fn compute_status(
    frame: &LegalFrame,
    subject_id: &str,
    view: &StoreView,
    ctx: &EvalContext,
) -> Result<BTreeSet<String>, CalculusError> {
    status_traced(frame, subject_id, view, ctx, &mut Tracer { trace: None })
}

fn status_traced(
    frame: &LegalFrame,
    subject_id: &str,
    view: &StoreView,
    ctx: &EvalContext,
    tracer: &mut Tracer<'_>,
) -> Result<BTreeSet<String>, CalculusError> {
    let scope = Scope::for_subject(view, subject_id, ctx);
    let mut statuses = BTreeSet::new();
    for rule in &frame.status_rules {
        let holds = scope.eval(&rule.condition).map_err(rule_err(&rule.rule_id))?;
        tracer.record(&rule.rule_id, Stage::Status, holds);
        if holds {
            statuses.insert(rule.status_label.clone());
        }
    }
    Ok(statuses)
}

/// Union of the grants of every grant rule whose condition holds given the
/// subject's statuses.
pub fn compute_bundle(
    frame: &LegalFrame,
    statuses: &BTreeSet<String>,
    subject_id: &str,
    view: &StoreView,
    ctx: &EvalContext,
) -> Result<Bundle, CalculusError> {
    bundle_traced(frame, statuses, subject_id, view, ctx, &mut Tracer { trace: None })
}

fn bundle_traced(
    frame: &LegalFrame,
    statuses: &BTreeSet<String>,
    subject_id: &str,
    view: &StoreView,
    ctx: &EvalContext,
    tracer: &mut Tracer<'_>,
) -> Result<Bundle, CalculusError> {
    let scope = Scope::for_subject(view, subject_id, ctx).with_statuses(statuses);
    let mut bundle = Bundle::new();
    for rule in &frame.grant_rules {
        let holds = scope
            .eval(&rule.requires_statuses)
            .map_err(rule_err(&rule.rule_id))?;
        tracer.record(&rule.rule_id, Stage::Grant, holds);
        if holds {
            bundle.extend(rule.grants.iter().cloned());
        }
    }
    Ok(bundle)
}

/// The rights `ctx.request_kind` requires: union of `requires` over every
/// matching request/access rule whose context condition holds.
///
/// A kind the frame does not declare is `UnknownRequestKind`. A declared
/// kind for which no rule applies (or, for writes, some touched field is
/// not covered by an applicable rule) is `NoApplicableRule`: nothing is
/// permitted unless a rule explicitly speaks to it.
pub fn required_eligibilities(frame: &LegalFrame, ctx: &EvalContext) -> Result<RequiredSet, CalculusError> {
    required_traced(frame, ctx, &mut Tracer { trace: None })
}

fn required_traced(
    frame: &LegalFrame,
    ctx: &EvalContext,
    tracer: &mut Tracer<'_>,
) -> Result<RequiredSet, CalculusError> {
    let kind = &ctx.request_kind;
    let unknown = || CalculusError::UnknownRequestKind(kind.to_string());
    match kind {
        RequestKind::Write(registry, fields) => {
            for field in fields {
                let single = RequestKind::Write(registry.clone(), [field.clone()].into());
                if !frame.request_kinds.iter().any(|k| k.covers(&single)) {
                    return Err(unknown());
                }
            }
        }
        _ => {
            if !frame.request_kinds.contains(kind) {
                return Err(unknown());
            }
        }
    }

    let empty = StoreView::empty();
    let scope = Scope {
        view: &empty,
        subject: None,
        ctx: Some(ctx),
        statuses: None,
    };
    let mut required = RequiredSet::new();
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    let mut any = false;
    let rules = frame
        .request_rules
        .iter()
        .map(|r| (r, Stage::Request))
        .chain(frame.access_rules.iter().map(|r| (r, Stage::Access)));
    for (rule, stage) in rules {
        if !rule.request_kind.covers(kind) {
            continue;
        }
        let holds = scope
            .eval(&rule.context_condition)
            .map_err(rule_err(&rule.rule_id))?;
        tracer.record(&rule.rule_id, stage, holds);
        if holds {
            any = true;
            if let RequestKind::Write(_, fields) = &rule.request_kind {
                covered.extend(fields.iter().map(String::as_str));
            }
            required.extend(rule.requires.iter().cloned());
        }
    }
    let complete = match kind {
        RequestKind::Write(_, fields) => fields.iter().all(|f| covered.contains(f.as_str())),
        _ => any,
    };
    if !complete {
        return Err(CalculusError::NoApplicableRule(kind.to_string()));
    }
    Ok(required)
}

/// Permit iff every required atom is in the bundle (non-strict
/// containment); the rest is reported as missing.
pub fn decide(bundle: &Bundle, required: &RequiredSet) -> Decision {
    let missing: BTreeSet<EligibilityAtom> = required
        .iter()
        .filter(|a| !bundle.contains(a))
        .cloned()
        .collect();
    let mut d = Decision::blank();
    d.permit = missing.is_empty();
    d.bundle = bundle.clone();
    d.required = required.clone();
    d.missing_atoms = missing;
    d
}

/// Full evaluation of one request for one subject.
pub fn evaluate(
    frames: &[LegalFrame],
    view: &StoreView,
    subject_id: &str,
    ctx: &EvalContext,
) -> Result<Decision, CalculusError> {
    let mut d = Decision::blank();
    run(frames, view, subject_id, ctx, &mut d)?;
    Ok(d)
}

/// Like [`evaluate`], but folds any error into a denying decision that
/// carries the error and the partial trace.
pub fn evaluate_or_deny(
    frames: &[LegalFrame],
    view: &StoreView,
    subject_id: &str,
    ctx: &EvalContext,
) -> Decision {
    let mut d = Decision::blank();
    if let Err(e) = run(frames, view, subject_id, ctx, &mut d) {
        d.permit = false;
        d.error = Some(DecisionError {
            code: e.code().to_string(),
            message: e.to_string(),
        });
    }
    d
}

fn run(
    frames: &[LegalFrame],
    view: &StoreView,
    subject_id: &str,
    ctx: &EvalContext,
    d: &mut Decision,
) -> Result<(), CalculusError> {
    d.subject = Some(subject_id.to_string());
    d.request_kind = Some(ctx.request_kind.clone());
    d.at = Some(ctx.time);
    if ctx.jurisdiction_tags.is_empty() {
        return Err(CalculusError::InvalidContext("jurisdiction_tags must not be empty".into()));
    }
    let mut ctx = ctx.clone();
    ctx.params.insert("subject".into(), Scalar::Str(subject_id.to_string()));

    let frame = select_frame(frames, &ctx)?;
    d.frame = Some(frame.frame_ref());

    let mut trace = Vec::new();
    let result = (|| {
        let mut tracer = Tracer { trace: Some(&mut trace) };
        let statuses = match status_traced(frame, subject_id, view, &ctx, &mut tracer) {
            Ok(s) => s,
            Err(e) => return Err((e, BTreeSet::new(), None)),
        };
        let bundle = bundle_traced(frame, &statuses, subject_id, view, &ctx, &mut tracer);
        let bundle = match bundle {
            Ok(b) => b,
            Err(e) => return Err((e, statuses, None)),
        };
        match required_traced(frame, &ctx, &mut tracer) {
            Ok(required) => Ok((statuses, bundle, required)),
            Err(e) => Err((e, statuses, Some(bundle))),
        }
    })();
    d.fired_rules = trace;
    match result {
        Ok((statuses, bundle, required)) => {
            let verdict = decide(&bundle, &required);
            d.statuses = statuses;
            d.bundle = bundle;
            d.required = required;
            d.permit = verdict.permit;
            d.missing_atoms = verdict.missing_atoms;
            Ok(())
        }
        Err((e, statuses, bundle)) => {
            d.statuses = statuses;
            d.bundle = bundle.unwrap_or_default();
            Err(e)
        }
    }
}
