//! Experiment harness: configuration, orchestration and reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, RESOLVED_KEY};
pub use report::{emit_calibration, emit_run_reports, emit_sweep_reports};
pub use run::{
    calibrate_constants, run_experiment, run_sweep, run_trial, Calibration, ExperimentOutput, Resolved,
    SweepRow, SweepSpec, SweepTable, TrialTrace,
};
