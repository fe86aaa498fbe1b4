//! Command-line companion to `qcbohm-core`: run configuration, parallel
//! ensemble driving, CSV/JSON artifacts, and the subcommand
//! implementations behind the `qcbohm` binary.
//!
//! Exit status contract, shared by every subcommand:
//!
//! * 0: run completed and all control arms passed
//! * 1: runtime failure (I/O, mid-run numerical guard)
//! * 2: invalid configuration or flags
//! * 3: contaminated run (more than 1% of replicas flagged for node
//!   proximity or boundary contact)
//! * 4: a control arm failed

use std::fmt;

pub mod commands;
pub mod config;
pub mod output;
pub mod stepper;

/// Top-level failure: either a config rejection (exit 2) or a runtime
/// error (exit 1). Clean runs with failed controls or contamination are
/// not errors; they return their exit status directly.
#[derive(Debug)]
pub enum CliError {
    Config(config::ConfigError),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn status(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        Self::Config(e)
    }
}
