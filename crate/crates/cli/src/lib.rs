//! Scenario loading and command execution behind the `fpmv` binary.

pub mod commands;
pub mod scenario;

pub use commands::{run, CliError, Command, RunOptions};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError, ValidationError};
