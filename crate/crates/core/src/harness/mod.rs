//! Monte Carlo harness: configuration, metrics, trial runner and figures.

pub mod config;
pub mod figures;
pub mod metrics;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentId, SceneParams, Variant};
pub use figures::{run_experiment, run_pipeline, ExperimentOutput, PipelineReport};
pub use metrics::{nmse_db, rmse_deg, MetricSeries, Reduce, Stat};
pub use runner::{run_trials, trial_rng};
