//! Batch front end for manipulator tracking scenarios.
//!
//! Scenario files are flat TOML documents over the keys of
//! [`manipsim::ScenarioConfig`]; an empty document is the default scenario.
//! The binary exposes three verbs: `run` (one scenario, full outputs),
//! `sweep` (many seeds, aggregated metrics) and `compare` (EKF vs AREKF
//! summary across seeds).

pub mod commands;
pub mod config_io;
pub mod output;

pub use commands::{compare, run, sweep, CliError, RunManifest, SeedSpec};
pub use config_io::{apply_overrides, parse_config, render_config};
