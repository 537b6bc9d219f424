//! The training loop: periodic selection, GRPO steps on the selected subset,
//! evaluation, rollout accounting and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{EvalRecord, RoundRecord, RunMetrics};
use crate::baselines::{
    acc_greedy_scores, acc_greedy_select, align_select, direct_val_batch, random_select,
    SelectorKind,
};
use crate::error::{Error, Result};
use crate::gradient::{ordered_mean, GradientVec};
use crate::grpo::{
    advantages, clipped_loss_and_gradient, optimizer_step, OptimizerState, ReferencePolicy,
};
use crate::policy::{AccuracyOracle, DomainTag, PolicyParams, Problem, RolloutGroup};
use crate::rng;
use crate::rollout::{rollout, RolloutCounts, RolloutLedger, RolloutPurpose, StreamSource};
use crate::scenarios::{RewardOracle, Scenario};
use crate::selector::{estimate_candidates, run_selection_round, selected_count, SelectionRound};
use crate::stats;

/// Cycles through a selected subset without replacement, reshuffling at the
/// start of every pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSampler {
    pub round_index: u64,
    pub order: Vec<u64>,
    pub cursor: usize,
    pub cycle: u64,
    seed: u64,
}

impl BatchSampler {
    pub fn new(ids: &[u64], seed: u64, round_index: u64) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input(
                "cannot sample batches from an empty subset".into(),
            ));
        }
        let mut sampler = Self {
            round_index,
            order: ids.to_vec(),
            cursor: 0,
            cycle: 0,
            seed,
        };
        sampler.shuffle();
        Ok(sampler)
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = rng::stream(self.seed, "shuffle", self.round_index, self.cycle);
        self.order.shuffle(&mut rng);
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<u64> {
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.cycle += 1;
                self.cursor = 0;
                self.shuffle();
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

/// Everything needed to continue a run exactly where it stopped. Random
/// streams are keyed by `(seed, label, step or round, item)`, so the step
/// counter and sampler position are the whole random state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub step: usize,
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
    pub sampler: Option<BatchSampler>,
    pub rollouts: RolloutCounts,
    pub round_start: RolloutCounts,
    pub metrics: RunMetrics,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::parse(path, e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Selected problems of the active round together with their reward oracle.
struct ActiveRound {
    problems: BTreeMap<u64, Problem>,
    oracle: RewardOracle,
}

/// Fraction of selected ids whose ground truth says corrupted. `None` when
/// any id has no ground-truth entry.
pub fn corrupted_selection_ratio(selected: &[u64], ground_truth: &RewardOracle) -> Option<f64> {
    if selected.is_empty() {
        return None;
    }
    let mut corrupted = 0usize;
    for id in selected {
        match ground_truth.corruption(*id) {
            Some(c) if c != crate::policy::Corruption::Clean => corrupted += 1,
            Some(_) => {}
            None => {
                log::warn!("no ground truth for selected problem {id}; corrupted ratio omitted");
                return None;
            }
        }
    }
    Some(corrupted as f64 / selected.len() as f64)
}

/// Fraction of selected ids whose pool entry carries `tag`. `None` when an id
/// is not in the pool.
pub fn domain_selection_ratio(selected: &[u64], pool: &[Problem], tag: DomainTag) -> Option<f64> {
    if selected.is_empty() {
        return None;
    }
    let tags: BTreeMap<u64, DomainTag> = pool.iter().map(|p| (p.id, p.domain_tag)).collect();
    let mut hits = 0usize;
    for id in selected {
        match tags.get(id) {
            Some(t) if *t == tag => hits += 1,
            Some(_) => {}
            None => return None,
        }
    }
    Some(hits as f64 / selected.len() as f64)
}

/// Closed-form rollout cost of one selection round spanning `steps` training steps.
pub fn expected_round_rollouts(cfg: &ExperimentConfig, steps: usize) -> RolloutCounts {
    let run = &cfg.experiment;
    let sel = &cfg.selection;
    RolloutCounts {
        validation: if run.selector.uses_validation_rollouts() {
            (run.validation_size * sel.k_v) as u64
        } else {
            0
        },
        candidate: if run.selector.estimates_candidates() {
            (sel.pool_size * sel.k_r) as u64
        } else {
            0
        },
        training: (steps * run.n_train * run.rollouts_per_training_problem) as u64,
    }
}

/// Closed-form rollout cost of a whole run.
pub fn expected_total_rollouts(cfg: &ExperimentConfig) -> RolloutCounts {
    let total = cfg.experiment.total_steps;
    if cfg.experiment.selector == SelectorKind::DirectVal {
        return expected_round_rollouts(cfg, total);
    }
    let u = cfg.selection.selection_interval;
    let mut sum = RolloutCounts::default();
    let mut start = 0;
    while start < total {
        let r = expected_round_rollouts(cfg, u.min(total - start));
        sum.validation += r.validation;
        sum.candidate += r.candidate;
        sum.training += r.training;
        start += u;
    }
    sum
}

pub struct Runner {
    cfg: ExperimentConfig,
    scenario: Scenario,
    validation: Vec<Problem>,
    validation_oracle: RewardOracle,
    test: Vec<Problem>,
    reference: ReferencePolicy,
    ledger: RolloutLedger,
    round: Option<ActiveRound>,
    state: Checkpoint,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario = Scenario::new(cfg.scenario.clone(), cfg.experiment.seed)?;
        let params = scenario.initial_policy().clone();
        let state = Checkpoint {
            step: 0,
            optimizer: OptimizerState::new(params.len()),
            params,
            sampler: None,
            rollouts: RolloutCounts::default(),
            round_start: RolloutCounts::default(),
            metrics: RunMetrics::new(cfg.experiment.selector, cfg.experiment.seed),
            config: cfg.clone(),
        };
        Self::assemble(cfg, scenario, state)
    }

    pub fn resume(checkpoint: Checkpoint) -> Result<Self> {
        let cfg = checkpoint.config.clone();
        cfg.validate()?;
        let scenario = Scenario::new(cfg.scenario.clone(), cfg.experiment.seed)?;
        let mut runner = Self::assemble(cfg, scenario, checkpoint)?;
        if let Some(sampler) = &runner.state.sampler {
            let ids = sampler.order.clone();
            runner.round = Some(runner.load_round(sampler.round_index, &ids)?);
        }
        Ok(runner)
    }

    fn assemble(cfg: ExperimentConfig, scenario: Scenario, state: Checkpoint) -> Result<Self> {
        let validation = scenario.validation_set(cfg.experiment.validation_size)?;
        let validation_oracle = RewardOracle::from_problems(&validation)?;
        let test = scenario.test_set(cfg.experiment.test_size)?;
        Ok(Self {
            reference: ReferencePolicy::new(scenario.initial_policy()),
            ledger: RolloutLedger::with_counts(state.rollouts),
            round: None,
            cfg,
            scenario,
            validation,
            validation_oracle,
            test,
            state,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn step(&self) -> usize {
        self.state.step
    }

    pub fn params(&self) -> &PolicyParams {
        &self.state.params
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.state.metrics
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut cp = self.state.clone();
        cp.rollouts = self.ledger.counts();
        cp
    }

    fn pool_index(&self, round_index: u64) -> u64 {
        if self.cfg.selection.fixed_pool {
            0
        } else {
            round_index
        }
    }

    fn load_round(&self, round_index: u64, selected: &[u64]) -> Result<ActiveRound> {
        let (pool, oracle) = self.scenario.pool(self.pool_index(round_index))?;
        let mut problems = BTreeMap::new();
        for p in pool {
            if selected.contains(&p.id) {
                problems.insert(p.id, p.redacted());
            }
        }
        if problems.len() != selected.len() {
            return Err(Error::Input(format!(
                "round {round_index}: selected ids missing from the regenerated pool"
            )));
        }
        Ok(ActiveRound { problems, oracle })
    }

    /// Runs until `total_steps` and records the final evaluation.
    pub fn run(mut self) -> Result<RunMetrics> {
        self.advance_to(self.cfg.experiment.total_steps)?;
        self.finish()
    }

    /// Executes training steps until the step counter reaches `target`.
    pub fn advance_to(&mut self, target: usize) -> Result<()> {
        let target = target.min(self.cfg.experiment.total_steps);
        while self.state.step < target {
            let s = self.state.step;
            let direct = self.cfg.experiment.selector == SelectorKind::DirectVal;
            if !direct && s.is_multiple_of(self.cfg.selection.selection_interval) {
                self.close_round(s)?;
                self.open_round(s)?;
            }
            if s.is_multiple_of(self.cfg.experiment.eval_every) {
                self.evaluate(s)?;
            }
            self.train_step(s)?;
            self.state.step += 1;
        }
        self.state.rollouts = self.ledger.counts();
        Ok(())
    }

    /// Final evaluation and budget checks; only valid once every step has run.
    pub fn finish(mut self) -> Result<RunMetrics> {
        let total = self.cfg.experiment.total_steps;
        if self.state.step != total {
            return Err(Error::Input(format!(
                "run stopped at step {} of {total}",
                self.state.step
            )));
        }
        self.close_round(total)?;
        self.evaluate(total)?;
        let counts = self.ledger.counts();
        let expected = expected_total_rollouts(&self.cfg);
        if counts != expected {
            return Err(Error::Numeric(format!(
                "rollout budget mismatch: used {counts:?}, expected {expected:?}"
            )));
        }
        self.state.metrics.total_rollouts = counts;
        Ok(self.state.metrics)
    }

    /// Checks the ledger against the closed form for the round ending at `step`.
    fn close_round(&mut self, step: usize) -> Result<()> {
        let Some(record) = self.state.metrics.rounds.last_mut() else {
            return Ok(());
        };
        if record.rollouts.is_some() {
            return Ok(());
        }
        let used = self.ledger.counts().since(&self.state.round_start);
        let expected = expected_round_rollouts(&self.cfg, step - record.step);
        if used != expected {
            return Err(Error::Numeric(format!(
                "round {}: rollout budget mismatch: used {used:?}, expected {expected:?}",
                record.round_index
            )));
        }
        record.rollouts = Some(used);
        Ok(())
    }

    fn open_round(&mut self, step: usize) -> Result<()> {
        let round_index = (step / self.cfg.selection.selection_interval) as u64;
        self.state.round_start = self.ledger.counts();
        let (pool, oracle) = self.scenario.pool(self.pool_index(round_index))?;
        let redacted: Vec<Problem> = pool.iter().map(Problem::redacted).collect();
        let selection = self.select(round_index, &redacted, &oracle)?;
        let scores = &selection.scores;
        let (score_min, score_median, score_max) = if scores.is_empty() {
            (None, None, None)
        } else {
            (
                Some(scores.iter().copied().fold(f64::INFINITY, f64::min)),
                Some(stats::median(scores)),
                Some(scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            )
        };
        let record = RoundRecord {
            step,
            round_index,
            metric: selection.metric,
            corrupted_ratio: corrupted_selection_ratio(&selection.selected_ids, &oracle),
            target_ratio: domain_selection_ratio(&selection.selected_ids, &pool, DomainTag::Target),
            degenerate: selection.degenerate,
            score_min,
            score_median,
            score_max,
            rollouts: None,
            selection,
        };
        log::info!(
            "round {round_index} at step {step}: selected {} (corrupted ratio {:?})",
            record.selection.selected_ids.len(),
            record.corrupted_ratio
        );
        let selected = record.selection.selected_ids.clone();
        self.state.metrics.rounds.push(record);
        self.state.sampler = Some(BatchSampler::new(
            &selected,
            self.cfg.experiment.seed,
            round_index,
        )?);
        let problems = redacted
            .into_iter()
            .filter(|p| selected.contains(&p.id))
            .map(|p| (p.id, p))
            .collect();
        self.round = Some(ActiveRound { problems, oracle });
        Ok(())
    }

    fn select(
        &self,
        round_index: u64,
        pool: &[Problem],
        oracle: &RewardOracle,
    ) -> Result<SelectionRound> {
        let sel = &self.cfg.selection;
        let grpo = &self.cfg.grpo;
        let params = &self.state.params;
        let streams = StreamSource::new(self.cfg.experiment.seed, round_index);
        let ids: Vec<u64> = pool.iter().map(|p| p.id).collect();
        let plain = |selected_ids: Vec<u64>,
                     scores: Vec<f64>,
                     rates: Vec<f64>,
                     degenerate: bool| SelectionRound {
            round_index,
            metric: None,
            candidate_ids: ids.clone(),
            scores,
            selected_ids,
            validation_gradient_norm: None,
            per_candidate_pass_rate: rates,
            degenerate,
        };
        match self.cfg.experiment.selector {
            SelectorKind::GradAlign => run_selection_round(
                params,
                pool,
                &self.validation,
                sel,
                grpo,
                oracle,
                &self.validation_oracle,
                streams,
                &self.ledger,
            ),
            SelectorKind::Random => {
                let chosen =
                    random_select(&ids, sel.selection_ratio, &mut streams.stream("random", 0))?;
                Ok(plain(chosen, Vec::new(), Vec::new(), false))
            }
            SelectorKind::AccGreedy => {
                let est = estimate_candidates(
                    params,
                    pool,
                    sel.k_r,
                    oracle,
                    grpo,
                    sel.normalize_advantages,
                    streams,
                    &self.ledger,
                )?;
                let rates: Vec<f64> = est.iter().map(|e| e.pass_rate).collect();
                let chosen = acc_greedy_select(&rates, &ids, sel.selection_ratio)?;
                Ok(plain(chosen, acc_greedy_scores(&rates)?, rates, false))
            }
            SelectorKind::Align => {
                let est = estimate_candidates(
                    params,
                    pool,
                    sel.k_r,
                    oracle,
                    grpo,
                    sel.normalize_advantages,
                    streams,
                    &self.ledger,
                )?;
                let rates: Vec<f64> = est.iter().map(|e| e.pass_rate).collect();
                let out = align_select(
                    &est,
                    sel.selection_ratio,
                    &mut streams.stream("fallback", 0),
                )?;
                Ok(plain(out.selected_ids, out.scores, rates, out.degenerate))
            }
            SelectorKind::DirectVal => {
                Err(Error::Config("direct-val has no selection rounds".into()))
            }
        }
    }

    fn evaluate(&mut self, step: usize) -> Result<()> {
        if self
            .state
            .metrics
            .evals
            .last()
            .is_some_and(|e| e.step == step)
        {
            return Ok(());
        }
        let oracle = AccuracyOracle;
        let val_acc = oracle.expected_accuracy(&self.state.params, &self.validation)?;
        let test_acc = oracle.expected_accuracy(&self.state.params, &self.test)?;
        if !val_acc.is_finite() || !test_acc.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite accuracy at step {step}"
            )));
        }
        log::info!("step {step}: val {val_acc:.4} test {test_acc:.4}");
        self.state.metrics.evals.push(EvalRecord {
            step,
            val_acc,
            test_acc,
        });
        Ok(())
    }

    fn training_batch(&mut self, step: usize) -> Result<Vec<Problem>> {
        let n = self.cfg.experiment.n_train;
        if self.cfg.experiment.selector == SelectorKind::DirectVal {
            let mut rng = rng::stream(self.cfg.experiment.seed, "direct-val", step as u64, 0);
            let idx = direct_val_batch(self.validation.len(), n, &mut rng)?;
            return Ok(idx
                .into_iter()
                .map(|i| self.validation[i].clone())
                .collect());
        }
        let (Some(sampler), Some(round)) = (self.state.sampler.as_mut(), self.round.as_ref())
        else {
            return Err(Error::Input(
                "training step without an active selection".into(),
            ));
        };
        Ok(sampler
            .next_batch(n)
            .into_iter()
            .map(|id| round.problems[&id].clone())
            .collect())
    }

    fn batch_oracle(&self) -> &RewardOracle {
        match &self.round {
            Some(round) if self.cfg.experiment.selector != SelectorKind::DirectVal => &round.oracle,
            _ => &self.validation_oracle,
        }
    }

    /// Rolls out the batch once under the current policy, then takes `epochs`
    /// optimizer steps on the clipped objective of those rollouts.
    fn train_step(&mut self, step: usize) -> Result<()> {
        let batch = self.training_batch(step)?;
        let seed = self.cfg.experiment.seed;
        let k = self.cfg.experiment.rollouts_per_training_problem;
        let grpo = &self.cfg.grpo;
        let old = self.state.params.clone();
        let oracle = self.batch_oracle();
        let groups: Vec<(RolloutGroup, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(j, problem)| {
                let mut rng = rng::stream(seed, "train", step as u64, j as u64);
                let group = rollout(
                    &old,
                    problem,
                    k,
                    oracle,
                    &mut rng,
                    &self.ledger,
                    RolloutPurpose::Training,
                )?;
                let adv = advantages(&group.rewards, grpo)?;
                Ok((group, adv))
            })
            .collect::<Result<_>>()?;
        for epoch in 0..grpo.epochs {
            let params = &self.state.params;
            let parts: Vec<(u64, f64, GradientVec)> = batch
                .par_iter()
                .zip(&groups)
                .enumerate()
                .map(|(j, (problem, (group, adv)))| {
                    let (loss, g) = clipped_loss_and_gradient(
                        params,
                        &old,
                        &self.reference,
                        problem,
                        group,
                        adv,
                        grpo,
                    )?;
                    Ok((j as u64, loss, g))
                })
                .collect::<Result<_>>()?;
            if let Some((j, loss, _)) = parts
                .iter()
                .find(|(_, l, g)| !l.is_finite() || !g.is_finite())
            {
                return Err(Error::Numeric(format!(
                    "non-finite objective ({loss}) for batch entry {j} at step {step}, epoch {epoch}"
                )));
            }
            let mean = ordered_mean(
                parts.into_iter().map(|(j, _, g)| (j, g)).collect(),
                old.len(),
            )?;
            optimizer_step(
                &mut self.state.optimizer,
                &mut self.state.params,
                &mean,
                grpo,
            )?;
            if !self.state.params.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite weights after step {step}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds and runs one experiment to completion.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    Runner::new(cfg.clone())?.run()
}

/// Runs every selector on every seed, sharing all other settings.
pub fn compare(
    cfg: &ExperimentConfig,
    selectors: &[SelectorKind],
    seeds: &[u64],
) -> Result<Vec<RunMetrics>> {
    let mut out = Vec::with_capacity(selectors.len() * seeds.len());
    for &seed in seeds {
        for &selector in selectors {
            let mut c = cfg.clone();
            c.experiment.seed = seed;
            c.experiment.selector = selector;
            out.push(run_experiment(&c)?);
        }
    }
    Ok(out)
}

/// Expected number of problems picked per round.
pub fn subset_size(cfg: &ExperimentConfig) -> usize {
    selected_count(cfg.selection.pool_size, cfg.selection.selection_ratio)
}
