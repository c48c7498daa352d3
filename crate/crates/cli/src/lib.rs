//! Scenario files and the task runner behind the `isoreal` binary.

pub mod runner;
pub mod scenario;

use std::fmt;
use std::path::Path;

pub use runner::{run_scenario, RunOutcome};
pub use scenario::{Scenario, Tolerances};

pub const EXIT_OK: u8 = 0;
pub const EXIT_TASK_FAILED: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_INVALID: u8 = 3;

/// Why a scenario could not be loaded.
#[derive(Debug)]
pub enum LoadError {
    Parse(scenario::ParseError),
    Invalid(scenario::ValidationError),
}

impl LoadError {
    pub fn exit_code(&self) -> u8 {
        match self {
            LoadError::Parse(_) => EXIT_PARSE,
            LoadError::Invalid(_) => EXIT_INVALID,
        }
    }
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Parse(e) => e.fmt(f),
            LoadError::Invalid(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for LoadError {}

/// Reads, parses and validates a scenario with the given defaults.
pub fn load(path: &Path, defaults: Tolerances) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        LoadError::Parse(scenario::ParseError(format!(
            "cannot read {}: {e}",
            path.display()
        )))
    })?;
    let file = scenario::parse(&text).map_err(LoadError::Parse)?;
    scenario::validate(file, defaults).map_err(LoadError::Invalid)
}
