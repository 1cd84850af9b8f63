//! Library side of the `spdechaos` command-line driver.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Config, Profile};
pub use error::CliError;
