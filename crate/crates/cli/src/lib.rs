//! Experiments for the splitting AVF integrator driven by TOML configs.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Flags, Outcome, RunError};
pub use config::RunConfig;
