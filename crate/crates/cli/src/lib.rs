//! Configuration-driven experiments for the spore/host branching process.
//!
//! A run reads a JSON config ([`config`]), computes everything in memory
//! ([`run`]) and then writes CSV and JSON artifacts ([`output`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, Experiment, ExperimentConfig};
pub use output::{emit_curves_csv, emit_samples_csv};
pub use run::{run_experiment, RunError, RunOptions, RunReport};
