//! Network endpoint for the governance service: the signed request
//! pipeline, the published gazette, and the notification scheduler.

pub mod config;
pub mod demo;
mod gazette;
pub mod http;
mod service;

pub use config::Config;
pub use service::{Reply, Service, ServiceError};
