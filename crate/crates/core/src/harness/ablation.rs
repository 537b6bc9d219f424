//! Ablations over the validation sample size and the alignment metric.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::RunMetrics;
use super::run::run_experiment;
use crate::baselines::SelectorKind;
use crate::error::{Error, Result};
use crate::policy::Corruption;
use crate::rollout::{RolloutLedger, StreamSource};
use crate::scenarios::{RewardOracle, Scenario};
use crate::selector::{run_selection_round, AlignmentMetric};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizePoint {
    pub k_v: usize,
    /// Pearson correlation of the two independent score vectors; `None` when
    /// either is constant.
    pub correlation: Option<f64>,
}

/// Scores one fixed pool twice with independent rollouts for each `k_v` and
/// correlates the two score vectors. Candidates use `k_r = k_v`.
pub fn ablate_sample_size(
    cfg: &ExperimentConfig,
    k_values: &[usize],
    seeds: (u64, u64),
) -> Result<Vec<SampleSizePoint>> {
    if k_values.len() < 2 || k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "k_v list must be strictly ascending with at least two entries, got {k_values:?}"
        )));
    }
    if seeds.0 == seeds.1 {
        return Err(Error::Config("the two ablation seeds must differ".into()));
    }
    let scenario = Scenario::new(cfg.scenario.clone(), cfg.experiment.seed)?;
    let (pool, oracle) = scenario.pool(0)?;
    let pool: Vec<_> = pool.iter().map(|p| p.redacted()).collect();
    let validation = scenario.validation_set(cfg.experiment.validation_size)?;
    let val_oracle = RewardOracle::from_problems(&validation)?;
    let params = scenario.initial_policy();
    k_values
        .iter()
        .map(|&k| {
            let mut sel = cfg.selection.clone();
            sel.k_v = k;
            sel.k_r = k;
            sel.validate()?;
            let score = |seed: u64| -> Result<Vec<f64>> {
                let ledger = RolloutLedger::default();
                let streams = StreamSource::new(seed, k as u64);
                let round = run_selection_round(
                    params,
                    &pool,
                    &validation,
                    &sel,
                    &cfg.grpo,
                    &oracle,
                    &val_oracle,
                    streams,
                    &ledger,
                )?;
                Ok(round.scores)
            };
            Ok(SampleSizePoint {
                k_v: k,
                correlation: stats::pearson(&score(seeds.0)?, &score(seeds.1)?),
            })
        })
        .collect()
}

/// Scores of clean and corrupted candidates across every round of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSplit {
    pub clean: Vec<f64>,
    pub corrupted: Vec<f64>,
}

impl ScoreSplit {
    /// Gap between the clean and corrupted medians in units of the standard
    /// deviation of all scores. `None` if a class is empty or scores are constant.
    pub fn separation(&self) -> Option<f64> {
        if self.clean.is_empty() || self.corrupted.is_empty() {
            return None;
        }
        let all: Vec<f64> = self.clean.iter().chain(&self.corrupted).copied().collect();
        let sd = stats::std_dev(&all);
        (sd > 0.0).then(|| (stats::median(&self.clean) - stats::median(&self.corrupted)) / sd)
    }
}

/// Splits a run's candidate scores by ground truth, regenerating each round's pool.
pub fn score_split(cfg: &ExperimentConfig, metrics: &RunMetrics) -> Result<ScoreSplit> {
    let scenario = Scenario::new(cfg.scenario.clone(), metrics.seed)?;
    let mut split = ScoreSplit {
        clean: Vec::new(),
        corrupted: Vec::new(),
    };
    for r in &metrics.rounds {
        let pool_index = if cfg.selection.fixed_pool {
            0
        } else {
            r.round_index
        };
        let (_, oracle) = scenario.pool(pool_index)?;
        for (id, s) in r.selection.candidate_ids.iter().zip(&r.selection.scores) {
            match oracle.corruption(*id) {
                Some(Corruption::Clean) => split.clean.push(*s),
                Some(_) => split.corrupted.push(*s),
                None => return Err(Error::Input(format!("no ground truth for candidate {id}"))),
            }
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricArm {
    pub metric: AlignmentMetric,
    pub metrics: RunMetrics,
    pub scores: ScoreSplit,
    pub separation: Option<f64>,
}

/// Paired GradAlign runs differing only in the alignment metric.
pub fn ablate_metric(cfg: &ExperimentConfig) -> Result<Vec<MetricArm>> {
    [AlignmentMetric::Cosine, AlignmentMetric::InnerProduct]
        .into_iter()
        .map(|metric| {
            let mut c = cfg.clone();
            c.experiment.selector = SelectorKind::GradAlign;
            c.selection.metric = metric;
            let metrics = run_experiment(&c)?;
            let scores = score_split(&c, &metrics)?;
            Ok(MetricArm {
                metric,
                separation: scores.separation(),
                metrics,
                scores,
            })
        })
        .collect()
}
