//! Experiment harness for the `ncdecomp` decomposition algorithms: trial sweeps,
//! CSV reports, convergence tables and the invariant suites.

pub mod config;
pub mod experiment;
pub mod report;
pub mod table;
pub mod verify;

pub use config::{ConfigError, RunConfig, ValidConfig};
pub use experiment::{run_config, run_experiment, Experiment, RunReport, TrialRow};
pub use report::{render_csv, write_csv, write_plots, ReportError};
