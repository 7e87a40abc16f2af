//! Run configuration, the calibrate-then-train pipeline, sweeps, and the
//! finite-difference gradient check.

mod config;
mod gradcheck;
mod metrics;
mod sweep;
mod train;

pub use config::RunConfig;
pub use gradcheck::{gradcheck, gradcheck_config, random_point, TensorCheck};
pub use metrics::{metrics_to_csv, MetricsRow, METRICS_CSV_HEADER};
pub use sweep::{
    run_sweep, summary_to_csv, sweep_points, write_summary, RunningStats, SummaryRow, SweepAxis,
    SweepPoint, LR_GRID, SUMMARY_CSV_HEADER,
};
pub use train::{
    calibrate_setup, collect_grad_stats, lr_column_params, run_calibrate, run_train,
    run_train_with_report, CalibrationOutcome, RunOutcome, Setup,
};

/// Share of the corpus held out for evaluation.
pub const EVAL_FRACTION: f64 = 0.05;
