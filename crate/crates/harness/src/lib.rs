//! Scenario language, run loop, audits and random scenario generation for the
//! mktsim marketplace simulator.

pub mod audit;
pub mod generator;
pub mod runner;
pub mod scenario;

pub use audit::{AuditReport, PluginNames};
pub use runner::{run_scenario, run_scenario_observed, RunOptions, RunOutput};
pub use scenario::{ParseError, Scenario};
