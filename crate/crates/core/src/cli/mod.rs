//! Batch front end: JSON sweep configurations, built-in scenarios and
//! the subcommands behind the `maml-lr` binary.

pub mod commands;
pub mod config;
pub mod matrix_io;
pub mod scenarios;
