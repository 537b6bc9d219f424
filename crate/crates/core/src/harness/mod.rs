//! Experiment harness: configuration, the training loop, metrics files and ablations.

pub mod ablation;
pub mod config;
pub mod metrics;
pub mod run;

pub use ablation::{
    ablate_metric, ablate_sample_size, score_split, MetricArm, SampleSizePoint, ScoreSplit,
};
pub use config::{ExperimentConfig, RunSettings};
pub use metrics::{export_metrics, read_metrics, EvalRecord, MetricRow, RoundRecord, RunMetrics};
pub use run::{
    compare, corrupted_selection_ratio, domain_selection_ratio, expected_round_rollouts,
    expected_total_rollouts, run_experiment, BatchSampler, Checkpoint, Runner,
};
