//! Configuration-driven front end for the `lambda-switch` simulator.

pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

pub use config::{Overrides, Resolved, Scenario, ScenarioConfig};
pub use error::CliError;
