//! Experiment harness: configuration, runs, attacks, benchmarks, reports.

pub mod attack;
pub mod config;
pub mod genbench;
pub mod report;
pub mod runner;

pub use attack::{run_attack, AttackVerdict, Scenario};
pub use config::{ConfigError, MemoryLayout, Overrides, RunConfig};
pub use genbench::{
    generate, Bench, CallTree, GenError, GenParams, Instrumentation, Prediction, Profile,
};
pub use report::{reports_to_csv, ReportError};
pub use runner::{execute, simulate, simulate_with, ExitKind, HarnessError, RunReport, Simulation};
