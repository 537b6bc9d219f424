//! Gradient-aligned candidate selection.
//!
//! Each round the validation gradient `G_v` is re-estimated from fresh
//! rollouts under the current policy, every candidate's GRPO gradient is
//! estimated from `k_r` rollouts, and candidates are ranked by their alignment
//! with `G_v`.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{cosine, ordered_mean, GradientVec, NEAR_ZERO_NORM};
use crate::grpo::GrpoConfig;
use crate::policy::{PolicyParams, Problem};
use crate::rollout::{group_gradient, rollout, RolloutLedger, RolloutPurpose, StreamSource};
use crate::scenarios::RewardOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMetric {
    #[default]
    Cosine,
    InnerProduct,
}

impl AlignmentMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentMetric::Cosine => "cosine",
            AlignmentMetric::InnerProduct => "inner_product",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Candidates per round (M).
    pub pool_size: usize,
    /// Keep `max(1, floor(M / q))` candidates.
    pub selection_ratio: usize,
    /// Optimizer steps between selection rounds (U).
    pub selection_interval: usize,
    /// Rollouts per validation problem.
    pub k_v: usize,
    /// Rollouts per candidate problem.
    pub k_r: usize,
    pub metric: AlignmentMetric,
    /// Use normalized (rather than raw-centered) advantages for selection gradients.
    pub normalize_advantages: bool,
    /// Rescore the round-0 pool every round instead of drawing a fresh one.
    pub fixed_pool: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            pool_size: 128,
            selection_ratio: 4,
            selection_interval: 10,
            k_v: 16,
            k_r: 4,
            metric: AlignmentMetric::Cosine,
            normalize_advantages: true,
            fixed_pool: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.selection_ratio < 2 {
            return Err(Error::Config(format!(
                "selection_ratio must exceed 1, got {}",
                self.selection_ratio
            )));
        }
        if self.pool_size == 0 || self.selection_interval == 0 {
            return Err(Error::Config(
                "pool_size and selection_interval must be at least 1".into(),
            ));
        }
        if self.k_r < 2 || self.k_v < 2 {
            return Err(Error::Config("k_r and k_v must be at least 2".into()));
        }
        if self.k_r > self.k_v {
            return Err(Error::Config(format!(
                "k_r ({}) must not exceed k_v ({})",
                self.k_r, self.k_v
            )));
        }
        Ok(())
    }

    pub fn selected_count(&self) -> usize {
        selected_count(self.pool_size, self.selection_ratio)
    }
}

pub fn selected_count(pool_size: usize, q: usize) -> usize {
    (pool_size / q.max(1)).max(1)
}

/// Result of one scoring-and-selection episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRound {
    pub round_index: u64,
    pub metric: Option<AlignmentMetric>,
    pub candidate_ids: Vec<u64>,
    /// Alignment scores in candidate order; empty for selectors that do not score.
    pub scores: Vec<f64>,
    pub selected_ids: Vec<u64>,
    pub validation_gradient_norm: Option<f64>,
    pub per_candidate_pass_rate: Vec<f64>,
    /// Selection fell back to uniform sampling because the target direction vanished.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationGradient {
    pub gradient: GradientVec,
    /// Every validation group had zero reward variance.
    pub all_groups_degenerate: bool,
}

/// `G_v`: mean over validation problems of their GRPO gradients from `k_v`
/// fresh rollouts each.
#[allow(clippy::too_many_arguments)]
pub fn validation_gradient(
    params: &PolicyParams,
    validation: &[Problem],
    k_v: usize,
    oracle: &RewardOracle,
    grpo: &GrpoConfig,
    normalize: bool,
    streams: StreamSource,
    ledger: &RolloutLedger,
) -> Result<ValidationGradient> {
    if validation.is_empty() {
        return Err(Error::Input("empty validation set".into()));
    }
    if k_v < 2 {
        return Err(Error::Input(format!("k_v must be at least 2, got {k_v}")));
    }
    if let Some(p) = validation.iter().find(|p| !p.is_clean()) {
        return Err(Error::Input(format!(
            "validation problem {} is not clean",
            p.id
        )));
    }
    let parts: Vec<(u64, GradientVec, bool)> = validation
        .par_iter()
        .map(|p| {
            let mut rng = streams.stream("validation", p.id);
            let group = rollout(
                params,
                p,
                k_v,
                oracle,
                &mut rng,
                ledger,
                RolloutPurpose::Validation,
            )?;
            let degenerate = group.rewards.iter().all(|&r| r == group.rewards[0]);
            let g = group_gradient(params, p, &group, grpo, normalize)?;
            Ok((p.id, g, degenerate))
        })
        .collect::<Result<_>>()?;
    let all_groups_degenerate = parts.iter().all(|(_, _, d)| *d);
    if all_groups_degenerate {
        log::warn!(
            "round {}: every validation group has zero reward variance",
            streams.round
        );
    }
    let gradient = ordered_mean(
        parts.into_iter().map(|(id, g, _)| (id, g)).collect(),
        params.len(),
    )?;
    Ok(ValidationGradient {
        gradient,
        all_groups_degenerate,
    })
}

/// A candidate's estimated gradient and the pass rate of the same rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEstimate {
    pub id: u64,
    pub gradient: GradientVec,
    pub pass_rate: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn candidate_gradient(
    params: &PolicyParams,
    problem: &Problem,
    k_r: usize,
    oracle: &RewardOracle,
    grpo: &GrpoConfig,
    normalize: bool,
    streams: StreamSource,
    ledger: &RolloutLedger,
) -> Result<CandidateEstimate> {
    if k_r < 2 {
        return Err(Error::Input(format!("k_r must be at least 2, got {k_r}")));
    }
    let mut rng = streams.stream("candidate", problem.id);
    let group = rollout(
        params,
        problem,
        k_r,
        oracle,
        &mut rng,
        ledger,
        RolloutPurpose::Candidate,
    )?;
    let gradient = group_gradient(params, problem, &group, grpo, normalize)?;
    Ok(CandidateEstimate {
        id: problem.id,
        gradient,
        pass_rate: group.pass_rate(),
    })
}

/// Estimates every candidate in parallel; output order follows `pool`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_candidates(
    params: &PolicyParams,
    pool: &[Problem],
    k_r: usize,
    oracle: &RewardOracle,
    grpo: &GrpoConfig,
    normalize: bool,
    streams: StreamSource,
    ledger: &RolloutLedger,
) -> Result<Vec<CandidateEstimate>> {
    pool.par_iter()
        .map(|p| candidate_gradient(params, p, k_r, oracle, grpo, normalize, streams, ledger))
        .collect()
}

pub fn alignment_score(
    g: &GradientVec,
    target: &GradientVec,
    metric: AlignmentMetric,
) -> Result<f64> {
    match metric {
        AlignmentMetric::Cosine => cosine(g, target),
        AlignmentMetric::InnerProduct => g.dot(target),
    }
}

/// Ids of the `max(1, floor(M/q))` highest scores; ties go to the smaller id.
/// Returned in rank order.
pub fn select_top_fraction(scores: &[f64], ids: &[u64], q: usize) -> Result<Vec<u64>> {
    if ids.is_empty() {
        return Err(Error::Input("cannot select from an empty pool".into()));
    }
    if scores.len() != ids.len() {
        return Err(Error::Input(format!(
            "{} scores for {} candidates",
            scores.len(),
            ids.len()
        )));
    }
    if q < 2 {
        return Err(Error::Config(format!(
            "selection ratio must exceed 1, got {q}"
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    Ok(order
        .into_iter()
        .take(selected_count(ids.len(), q))
        .map(|i| ids[i])
        .collect())
}

/// Uniform sample without replacement of `max(1, floor(M/q))` ids.
pub fn uniform_subset(ids: &[u64], q: usize, rng: &mut crate::rng::Stream) -> Result<Vec<u64>> {
    if ids.is_empty() {
        return Err(Error::Input("cannot select from an empty pool".into()));
    }
    if q < 2 {
        return Err(Error::Config(format!(
            "selection ratio must exceed 1, got {q}"
        )));
    }
    let n = selected_count(ids.len(), q);
    Ok(sample(rng, ids.len(), n).iter().map(|i| ids[i]).collect())
}

/// One GradAlign round: fresh `G_v`, candidate gradients, ranking, selection.
#[allow(clippy::too_many_arguments)]
pub fn run_selection_round(
    params: &PolicyParams,
    pool: &[Problem],
    validation: &[Problem],
    cfg: &SelectionConfig,
    grpo: &GrpoConfig,
    pool_oracle: &RewardOracle,
    validation_oracle: &RewardOracle,
    streams: StreamSource,
    ledger: &RolloutLedger,
) -> Result<SelectionRound> {
    if pool.len() != cfg.pool_size {
        return Err(Error::Config(format!(
            "pool has {} candidates, configuration says {}",
            pool.len(),
            cfg.pool_size
        )));
    }
    let norm = cfg.normalize_advantages;
    let target = validation_gradient(
        params,
        validation,
        cfg.k_v,
        validation_oracle,
        grpo,
        norm,
        streams,
        ledger,
    )?;
    let estimates = estimate_candidates(
        params,
        pool,
        cfg.k_r,
        pool_oracle,
        grpo,
        norm,
        streams,
        ledger,
    )?;
    let candidate_ids: Vec<u64> = estimates.iter().map(|e| e.id).collect();
    let scores = estimates
        .iter()
        .map(|e| alignment_score(&e.gradient, &target.gradient, cfg.metric))
        .collect::<Result<Vec<_>>>()?;
    let g_norm = target.gradient.norm();
    let degenerate = g_norm < NEAR_ZERO_NORM;
    let selected_ids = if degenerate {
        log::warn!(
            "round {}: validation gradient vanished, selecting uniformly",
            streams.round
        );
        uniform_subset(
            &candidate_ids,
            cfg.selection_ratio,
            &mut streams.stream("fallback", 0),
        )?
    } else {
        select_top_fraction(&scores, &candidate_ids, cfg.selection_ratio)?
    };
    Ok(SelectionRound {
        round_index: streams.round,
        metric: Some(cfg.metric),
        candidate_ids,
        scores,
        selected_ids,
        validation_gradient_norm: Some(g_norm),
        per_candidate_pass_rate: estimates.iter().map(|e| e.pass_rate).collect(),
        degenerate,
    })
}
