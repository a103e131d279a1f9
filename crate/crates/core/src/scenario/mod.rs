//! Scenario configuration, analytic latency bound, closed-loop runner, and
//! trace analysis.
//!
//! This module is where the pieces meet: the robot model senses and
//! actuates, the TDMA medium carries sensor data up and voted commands
//! down, replicated localization containers compute on the edge under the
//! orchestration layer, and every completed round is checked against the
//! analytic end-to-end budget. Runs are deterministic per (config, seed)
//! and emit CSV traces plus a JSON summary.

pub mod analyze;
pub mod bound;
pub mod config;
pub mod runner;
pub mod sweep;
#[cfg(test)]
pub(crate) mod testutil;

pub use analyze::{analyze_dir, analyze_run, AnalysisReport};
pub use bound::{e2e_bound, E2eBudget};
pub use config::{LoadedScenario, ScenarioConfig, ScenarioError};
pub use runner::{run_scenario, LatencyRecord, RunOutput, RunSummary, TraceSet, LATENCY_HEADER};
pub use sweep::{contention_sweep, SweepPoint};
