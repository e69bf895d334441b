//! Command-line front end for `snellforge-core`: scenario files, solver runs,
//! the invariant suite and random scenario generation.

pub mod check;
pub mod error;
pub mod gen;
pub mod run;
pub mod scenario;

use std::path::Path;

pub use error::{CliError, CliResult};
use run::SolutionFile;
use scenario::{Problem, Scenario};

/// A file handed to `check`: a scenario, or a solution written by `run`.
pub enum Input {
    Scenario(Problem),
    Solution(Problem, Box<SolutionFile>),
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_scenario(path: &Path) -> CliResult<Problem> {
    Scenario::from_json(&read_file(path)?)?.validate()
}

pub fn load_input(path: &Path) -> CliResult<Input> {
    let value: serde_json::Value = serde_json::from_str(&read_file(path)?)?;
    if value.get("solution").is_some() {
        let file: SolutionFile = serde_json::from_value(value)?;
        let problem = file.scenario.validate()?;
        Ok(Input::Solution(problem, Box::new(file)))
    } else {
        let scenario: Scenario = serde_json::from_value(value)?;
        Ok(Input::Scenario(scenario.validate()?))
    }
}
