//! Experiment configs, parallel sweeps and result aggregation.
//!
//! Config files are TOML with a `version` key; unknown keys are rejected.

mod config;
mod jobs;
mod sweep;

pub use config::{halving_grid, parse_seeds, AlgorithmSpec, ExperimentConfig, SCHEMA_VERSION};
pub use jobs::{
    run_sde, run_wnh, write_schedule_csv, ArmSummary, ScheduleJob, SdeJob, SdeOutcome, WnhJob,
    WnhOutcome, WnhSource,
};
pub use sweep::{
    aggregate, mean_std, sweep, write_summary, RunFile, SummaryRow, SummaryTable, SweepResult,
};
