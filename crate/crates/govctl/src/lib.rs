//! Reference client for the governance endpoint. The client signs
//! requests and prints signed answers; it never decides anything itself.

pub mod args;
pub mod client;
pub mod config;
pub mod render;

/// Exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const ERROR: u8 = 1;
    pub const DENY: u8 = 2;
    pub const USAGE: u8 = 64;
}
