//! Library side of the `chaoslab` binary: config parsing, subcommands and the
//! shared check suites.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod selftest;
