//! Experiment harness for the noise-tolerant halfspace learners: config
//! parsing, seeded batch execution, baseline comparisons, and plot-data
//! emission. The `halfspace` binary is a thin CLI over these functions.

pub mod config;
pub mod experiment;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{
    compare_baselines, emit_plot_data, load_records, run_experiment, summarize, CompareSummary,
    ExperimentSummary, HarnessError, TrialRecord,
};
