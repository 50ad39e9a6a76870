//! Pipeline commands, the event-sourced session service and its HTTP API.

pub mod api;
pub mod commands;
pub mod config;
pub mod events;
pub mod service;
pub mod workdir;

pub use config::AppConfig;
pub use service::{Service, ServiceError};
