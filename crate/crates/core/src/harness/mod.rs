//! Metrics, result tables, experiment configuration and orchestration.

mod experiment;
mod metrics;
mod table;

use std::path::PathBuf;

use thiserror::Error;

pub use experiment::{
    ablation_flags, git_blob_hash, metric_rows, write_masks, run_experiment, run_experiment_path, with_threads, worker_threads, BaselineConfig,
    ClassifierSection, ExperimentConfig, PolicyVariant, PriorConfig, RunMode, RunOptions, RunReport, CONFIG_FILE,
    DATASET_FILE, HEATMAP_FILE, LOCK_FILE, METRICS_FILE, REPORT_FILE, SUMMARY_FILE,
};
pub use metrics::{auroc, choose_threshold, confusion, mask_heatmap, metrics_at, operating_point_metrics, MetricError, OperatingPoint};
pub use table::{Aggregate, MetricRow, MetricsTable, SummaryRow, METRICS_HEADER, NA};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0} is in use by another run")]
    Locked(PathBuf),
    #[error("{0} already holds a run; pass resume or overwrite")]
    PartialRun(PathBuf),
    #[error("{0} holds a run with a different config")]
    ConfigMismatch(PathBuf),
    #[error("classifier parameters changed during evaluation")]
    ClassifierMutated,
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Classifier(#[from] crate::classifier::ClassifierError),
    #[error(transparent)]
    Ppo(#[from] crate::ppo::PpoError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error(transparent)]
    Mask(#[from] crate::masking::MaskError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
