//! Synthetic problems and the linear-softmax policy.
//!
//! The policy scores each discrete answer `a` of a problem with features `x`
//! by the logit `w_a · x` and samples from the softmax. Because the answer set
//! is small, expected accuracy and its gradient have closed forms, which the
//! [`AccuracyOracle`] exposes for evaluation and for checking estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::GradientVec;

/// Domain label used by the imbalanced-pool scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Target,
    Offtopic,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Target => "target",
            DomainTag::Offtopic => "offtopic",
        }
    }
}

impl std::str::FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(DomainTag::Target),
            "offtopic" => Ok(DomainTag::Offtopic),
            other => Err(Error::Input(format!("unknown domain tag {other:?}"))),
        }
    }
}

/// How rewards for a problem are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Corruption {
    /// Reward is 1 iff the answer equals the reference.
    Clean,
    /// Reward is drawn Bernoulli(p), independent of the answer.
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: u64,
    pub features: Vec<f64>,
    pub answer_count: usize,
    pub reference_answer: usize,
    pub domain_tag: DomainTag,
    /// `None` when the reward mode is withheld from the holder of this value
    /// (selectors only ever see redacted candidates).
    pub corruption: Option<Corruption>,
}

impl Problem {
    pub fn new(
        id: u64,
        features: Vec<f64>,
        answer_count: usize,
        reference_answer: usize,
        domain_tag: DomainTag,
        corruption: Corruption,
    ) -> Result<Self> {
        let problem = Self {
            id,
            features,
            answer_count,
            reference_answer,
            domain_tag,
            corruption: Some(corruption),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.answer_count < 2 {
            return Err(Error::Input(format!(
                "problem {}: answer_count must be at least 2",
                self.id
            )));
        }
        if self.reference_answer >= self.answer_count {
            return Err(Error::Input(format!(
                "problem {}: reference answer {} out of range [0, {})",
                self.id, self.reference_answer, self.answer_count
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "problem {}: non-finite feature",
                self.id
            )));
        }
        if let Some(Corruption::Bernoulli { p }) = self.corruption {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Input(format!(
                    "problem {}: bernoulli p = {p}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Copy with the reward mode withheld.
    pub fn redacted(&self) -> Self {
        Self {
            corruption: None,
            ..self.clone()
        }
    }

    pub fn is_clean(&self) -> bool {
        matches!(self.corruption, Some(Corruption::Clean))
    }
}

/// Weights of a linear-softmax policy, `answer_count × feature_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub answer_count: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    /// Snapshot tag, bumped by every optimizer step. Rollout groups carry the
    /// tag they were sampled under.
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(answer_count: usize, feature_dim: usize) -> Self {
        Self {
            answer_count,
            feature_dim,
            weights: vec![0.0; answer_count * feature_dim],
            version: 0,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let answer_count = rows.len();
        let feature_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != feature_dim) {
            return Err(Error::Config("ragged weight rows".into()));
        }
        Ok(Self {
            answer_count,
            feature_dim,
            weights: rows.concat(),
            version: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, answer: usize) -> &[f64] {
        &self.weights[answer * self.feature_dim..(answer + 1) * self.feature_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    fn check(&self, problem: &Problem) -> Result<()> {
        if problem.features.len() != self.feature_dim {
            return Err(Error::Config(format!(
                "problem {} has {} features, policy expects {}",
                problem.id,
                problem.features.len(),
                self.feature_dim
            )));
        }
        if problem.answer_count != self.answer_count {
            return Err(Error::Config(format!(
                "problem {} has {} answers, policy expects {}",
                problem.id, problem.answer_count, self.answer_count
            )));
        }
        Ok(())
    }
}

/// Answers sampled for one problem under one policy snapshot, with their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub problem_id: u64,
    pub answers: Vec<usize>,
    pub rewards: Vec<f64>,
    pub policy_snapshot_tag: u64,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn pass_rate(&self) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

pub fn logits(params: &PolicyParams, problem: &Problem) -> Result<Vec<f64>> {
    params.check(problem)?;
    Ok((0..params.answer_count)
        .map(|a| {
            params
                .row(a)
                .iter()
                .zip(&problem.features)
                .map(|(w, x)| w * x)
                .sum()
        })
        .collect())
}

/// Numerically stable log-softmax (max-shifted).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

pub fn probabilities(params: &PolicyParams, problem: &Problem) -> Result<Vec<f64>> {
    Ok(log_softmax(&logits(params, problem)?)
        .into_iter()
        .map(f64::exp)
        .collect())
}

fn check_answer(problem: &Problem, answer: usize) -> Result<()> {
    if answer >= problem.answer_count {
        return Err(Error::Input(format!(
            "answer {answer} out of range for problem {} with {} answers",
            problem.id, problem.answer_count
        )));
    }
    Ok(())
}

pub fn log_prob(params: &PolicyParams, problem: &Problem, answer: usize) -> Result<f64> {
    check_answer(problem, answer)?;
    Ok(log_softmax(&logits(params, problem)?)[answer])
}

/// Score function `∇ log π(answer | x)`: block `a` is `(1[a = answer] − p_a) · x`.
pub fn grad_log_prob(
    params: &PolicyParams,
    problem: &Problem,
    answer: usize,
) -> Result<GradientVec> {
    check_answer(problem, answer)?;
    let probs = probabilities(params, problem)?;
    Ok(score_from_probs(&probs, &problem.features, answer))
}

pub(crate) fn score_from_probs(probs: &[f64], features: &[f64], answer: usize) -> GradientVec {
    let d = features.len();
    let mut out = vec![0.0; probs.len() * d];
    for (a, p) in probs.iter().enumerate() {
        let coef = if a == answer { 1.0 - p } else { -p };
        for (slot, x) in out[a * d..(a + 1) * d].iter_mut().zip(features) {
            *slot = coef * x;
        }
    }
    GradientVec(out)
}

/// Draws `k` answers i.i.d. from the policy. Rewards are left empty; the caller
/// judges them.
pub fn sample_answers<R: Rng + ?Sized>(
    params: &PolicyParams,
    problem: &Problem,
    k: usize,
    rng: &mut R,
) -> Result<RolloutGroup> {
    if k == 0 {
        return Err(Error::Input("cannot sample an empty rollout group".into()));
    }
    let probs = probabilities(params, problem)?;
    let answers = (0..k).map(|_| sample_categorical(&probs, rng)).collect();
    Ok(RolloutGroup {
        problem_id: problem.id,
        answers,
        rewards: Vec::new(),
        policy_snapshot_tag: params.version,
    })
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Closed-form expected accuracy `J(θ)` and its gradient over clean problems.
#[derive(Debug, Clone, Copy, Default)]
pub struct AccuracyOracle;

impl AccuracyOracle {
    fn check_problems(problems: &[Problem]) -> Result<()> {
        if problems.is_empty() {
            return Err(Error::Input(
                "expected accuracy over an empty problem set".into(),
            ));
        }
        if let Some(p) = problems.iter().find(|p| !p.is_clean()) {
            return Err(Error::Input(format!(
                "expected accuracy is defined for clean problems only; problem {} is not",
                p.id
            )));
        }
        Ok(())
    }

    /// Mean over problems of the softmax probability of the reference answer.
    pub fn expected_accuracy(&self, params: &PolicyParams, problems: &[Problem]) -> Result<f64> {
        Self::check_problems(problems)?;
        let mut total = 0.0;
        for p in problems {
            total += log_prob(params, p, p.reference_answer)?.exp();
        }
        Ok(total / problems.len() as f64)
    }

    /// `∇J = mean_x p_ref(x) · ∇ log π(ref | x)`.
    pub fn expected_accuracy_gradient(
        &self,
        params: &PolicyParams,
        problems: &[Problem],
    ) -> Result<GradientVec> {
        Self::check_problems(problems)?;
        let mut total = GradientVec::zeros(params.len());
        for p in problems {
            let probs = probabilities(params, p)?;
            let score = score_from_probs(&probs, &p.features, p.reference_answer);
            total.add_scaled(probs[p.reference_answer], &score)?;
        }
        Ok(total.scaled(1.0 / problems.len() as f64))
    }

    /// Expected accuracy of a single problem.
    pub fn problem_accuracy(&self, params: &PolicyParams, problem: &Problem) -> Result<f64> {
        Ok(log_prob(params, problem, problem.reference_answer)?.exp())
    }
}
