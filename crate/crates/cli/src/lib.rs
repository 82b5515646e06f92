//! Library side of the `projlm` command-line tool: run configuration,
//! manifests and the subcommand implementations.

#![allow(clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod manifest;
