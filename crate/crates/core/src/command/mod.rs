//! The restricted command language: parsing, mapping commands to gated
//! requests, and executing them only when the calculus permits.

mod ast;
mod gate;
mod mapping;
mod parser;

pub use ast::{Command, CommandAst, Literal, Pred};
pub use gate::{
    gate_and_execute, receipt_id_for, store_error_code, AuditEntry, AuditLog, Authority, CommandResult,
    GateContext, GateViolation, Outcome,
};
pub use mapping::{map_to_request, RequestSpec};
pub use parser::{parse, ParseError, ParseErrorKind, MAX_COMMAND_BYTES, MAX_PRED_DEPTH};

/// Version of the published grammar.
pub const GRAMMAR_VERSION: &str = "1";
