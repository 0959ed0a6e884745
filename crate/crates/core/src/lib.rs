//! Self-service governance core: the eligibility calculus, event-sourced
//! registries, the restricted command language, attestation and
//! change notification.

pub mod attest;
pub mod calculus;
pub mod canonical;
pub mod clock;
pub mod command;
pub mod fixtures;
pub mod notify;
pub mod protocol;
pub mod scalar;
pub mod store;
