//! Scenario harness for `gencomm-core`: JSON configs, seeded parallel runs,
//! sweeps, CSV output, codec files and the verification suites.

pub mod codec_file;
pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod suites;

pub use config::ScenarioConfig;
pub use error::{HarnessError, Result};
pub use runner::{run_scenario, sweep, RunOptions, ScenarioResult};
