//! Command-line entry points and the operator gateway.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod gateway;
pub mod session;
