//! Command-line front end: run configuration and subcommands.

pub mod commands;
pub mod config;

pub use commands::{run_command, THREADS_ENV};
pub use config::{
    apply_override, echo_config, parse_config, parse_config_str, OutputConfig, RunConfig,
};
