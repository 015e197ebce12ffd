//! Library half of the `fmc` command: TOML configuration and the
//! subcommand implementations, kept free of I/O so they can be tested.

pub mod commands;
pub mod config;
