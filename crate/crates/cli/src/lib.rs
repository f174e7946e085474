//! Command-line front end: scenario-grid simulation, single-dataset fits
//! and SVG reports.

pub mod commands;
pub mod config;
pub mod report;
pub mod results;

use std::fmt;

/// An error with the process exit code it maps to: 2 for bad input
/// (config, CSV, arguments), 1 for anything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(err: impl fmt::Display) -> Self {
        Self { code: 1, message: err.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
