//! Experiment runner: configuration, worker orchestration, cost-model
//! predictions, post-run checks and metrics output.

pub mod config;
pub mod cost;
pub mod metrics;
mod run;

pub use config::{k_for, ExperimentConfig, MetricsFormat, TransportKind};
pub use cost::{cost_predict, CostModelParams, CostPrediction, Interval};
pub use metrics::{emit_metrics, read_metrics, write_metrics, MetricsRow, CSV_HEADER};
pub use run::{
    counted_phases, post_run_checks, run_experiment, Check, IterationRecord, RankIteration,
    RunReport, DRIFT_ALLOWANCE,
};
