//! Scenario harness: config parsing, execution, reports, and log replay.

pub mod config;
pub mod replay;
pub mod report;
pub mod runner;

pub use config::{builtin_policies, parse_policies, parse_scenario, ConfigError, Scenario};
pub use replay::{replay_log, ReplayError, ReplayStats, ViolationClass};
pub use report::RunReport;
pub use runner::{run_scenario, run_scenario_with_policy, write_outputs, RunError, RunOutput};
