//! Service and command-line front end for `aqua-core`.

pub mod commands;
pub mod config;
pub mod service;
pub mod store;

pub use config::ServiceConfig;
pub use service::{router, AppState};
