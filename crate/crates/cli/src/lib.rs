//! Command-line front end for the `enn-core` experiments.
//!
//! Every subcommand is also a plain function in [`commands`], which is what
//! the integration tests call.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod models;

pub use error::{CliError, Result};
