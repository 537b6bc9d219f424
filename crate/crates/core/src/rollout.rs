//! Sampling-plus-judging, per-problem random streams and rollout accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gradient::GradientVec;
use crate::grpo::compute_advantages;
use crate::grpo::{surrogate_gradient, GrpoConfig};
use crate::policy::{sample_answers, PolicyParams, Problem, RolloutGroup};
use crate::rng::{self, Stream};
use crate::scenarios::RewardOracle;

/// Derives per-problem streams for one round of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSource {
    pub seed: u64,
    pub round: u64,
}

impl StreamSource {
    pub fn new(seed: u64, round: u64) -> Self {
        Self { seed, round }
    }

    pub fn stream(&self, label: &str, item: u64) -> Stream {
        rng::stream(self.seed, label, self.round, item)
    }
}

/// What a batch of rollouts was spent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutPurpose {
    Validation,
    Candidate,
    Training,
}

/// Thread-safe rollout counters.
#[derive(Debug, Default)]
pub struct RolloutLedger {
    validation: AtomicU64,
    candidate: AtomicU64,
    training: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutCounts {
    pub validation: u64,
    pub candidate: u64,
    pub training: u64,
}

impl RolloutCounts {
    pub fn total(&self) -> u64 {
        self.validation + self.candidate + self.training
    }

    /// Component-wise difference; `earlier` must not exceed `self`.
    pub fn since(&self, earlier: &RolloutCounts) -> RolloutCounts {
        RolloutCounts {
            validation: self.validation - earlier.validation,
            candidate: self.candidate - earlier.candidate,
            training: self.training - earlier.training,
        }
    }
}

impl RolloutLedger {
    /// A ledger that continues from previously recorded counts.
    pub fn with_counts(counts: RolloutCounts) -> Self {
        Self {
            validation: AtomicU64::new(counts.validation),
            candidate: AtomicU64::new(counts.candidate),
            training: AtomicU64::new(counts.training),
        }
    }

    pub fn record(&self, purpose: RolloutPurpose, n: u64) {
        let slot = match purpose {
            RolloutPurpose::Validation => &self.validation,
            RolloutPurpose::Candidate => &self.candidate,
            RolloutPurpose::Training => &self.training,
        };
        slot.fetch_add(n, Ordering::Relaxed);
    }

    pub fn counts(&self) -> RolloutCounts {
        RolloutCounts {
            validation: self.validation.load(Ordering::Relaxed),
            candidate: self.candidate.load(Ordering::Relaxed),
            training: self.training.load(Ordering::Relaxed),
        }
    }
}

/// Samples `k` answers under `params` and judges each with `oracle`.
pub fn rollout(
    params: &PolicyParams,
    problem: &Problem,
    k: usize,
    oracle: &RewardOracle,
    rng: &mut Stream,
    ledger: &RolloutLedger,
    purpose: RolloutPurpose,
) -> Result<RolloutGroup> {
    let mut group = sample_answers(params, problem, k, rng)?;
    group.rewards = group
        .answers
        .iter()
        .map(|&a| oracle.judge(problem, a, rng))
        .collect::<Result<_>>()?;
    ledger.record(purpose, k as u64);
    Ok(group)
}

/// On-policy GRPO gradient of one group, with normalized or raw-centered advantages.
pub fn group_gradient(
    params: &PolicyParams,
    problem: &Problem,
    group: &RolloutGroup,
    grpo: &GrpoConfig,
    normalize: bool,
) -> Result<GradientVec> {
    let set = compute_advantages(&group.rewards, grpo)?;
    let adv = if normalize {
        &set.normalized
    } else {
        &set.raw_centered
    };
    surrogate_gradient(params, problem, group, adv)
}
