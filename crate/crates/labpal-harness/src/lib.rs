//! Experiment harness: config ingestion, training runs with metrics
//! persistence, the full-batch line profiler, the ground-truth replay
//! preset, and the multi-optimizer comparison runner.

pub mod compare;
pub mod config;
pub mod csv;
mod error;
pub mod profile;
pub mod replay;
pub mod runner;

pub use config::{load_config, EpsilonMode, OptimizerSpec, OutputSpec, ProblemSpec, RunConfig};
pub use error::{HarnessError, Result};
