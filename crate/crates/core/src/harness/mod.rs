//! Scenario configuration, runs, sweeps and their file output.

pub mod config;
pub mod fit;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{parse_config, ScenarioConfig};
pub use fit::{fit_loglog, LogLogFit};
pub use run::{run_config, run_scenario, DiagnosticsRow, RunOutput, Scenario};
pub use sweep::{sweep_eps, sweep_n, EpsSweep, NSweep};
