//! Synthetic problem pools for the three selection regimes.
//!
//! All problems share a hidden linear "teacher" `W*`: a problem with features
//! `x` has reference answer `argmax_a (W* x)_a`, so training on clean problems
//! from a domain transfers to held-out problems from that domain. The
//! regimes differ in what else the pool contains:
//!
//! * `noisy_rewards`: a fixed fraction of problems are judged by a coin flip.
//! * `imbalanced`: target-domain problems live on the first `target_dims`
//!   feature coordinates, off-topic problems on the rest, and the target domain
//!   is a small share of the pool.
//! * `low_utility`: part of the pool is already solved by the initial policy.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{AccuracyOracle, Corruption, DomainTag, PolicyParams, Problem};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NoisyRewards,
    Imbalanced,
    LowUtility,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::NoisyRewards => "noisy_rewards",
            ScenarioKind::Imbalanced => "imbalanced",
            ScenarioKind::LowUtility => "low_utility",
        }
    }
}

/// How domains occupy feature space and how hard problems are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureGeometry {
    /// Leading coordinates used by target-domain problems in the imbalanced
    /// regime; off-topic problems use the remaining ones.
    pub target_dims: usize,
    /// Log-normal sigma of the per-problem feature scale.
    pub norm_spread: f64,
    /// Initial policy weight on the off-topic domain, as a multiple of the teacher.
    pub offtopic_skill: f64,
    /// Initial policy in the low-utility regime, as a multiple of the teacher.
    pub prior_skill: f64,
    /// Feature scale multiplier for easy problems.
    pub easy_scale: f64,
    /// Feature scale multiplier for corrupted problems in the noisy regime.
    /// Values above one give them larger gradients, as hard problems with
    /// long answers have.
    pub corrupt_scale: f64,
    /// Minimum initial pass probability of an easy problem.
    pub easy_threshold: f64,
    /// Initial pass probability band for mid-difficulty problems.
    pub mid_low: f64,
    pub mid_high: f64,
    /// Probability that a reference answer is replaced by a uniformly random one.
    pub label_noise: f64,
}

impl Default for FeatureGeometry {
    fn default() -> Self {
        Self {
            target_dims: 4,
            norm_spread: 0.5,
            offtopic_skill: 0.6,
            prior_skill: 0.5,
            easy_scale: 3.0,
            corrupt_scale: 1.0,
            easy_threshold: 0.99,
            mid_low: 0.2,
            mid_high: 0.8,
            label_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub pool_size: usize,
    pub feature_dim: usize,
    pub answer_count: usize,
    pub corrupt_fraction: f64,
    pub bernoulli_p: f64,
    pub target_fraction: f64,
    pub easy_fraction: f64,
    pub feature_geometry: FeatureGeometry,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::NoisyRewards,
            pool_size: 128,
            feature_dim: 8,
            answer_count: 4,
            corrupt_fraction: 0.5,
            bernoulli_p: 0.5,
            target_fraction: 0.1,
            easy_fraction: 0.5,
            feature_geometry: FeatureGeometry::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        frac("corrupt_fraction", self.corrupt_fraction)?;
        frac("target_fraction", self.target_fraction)?;
        frac("easy_fraction", self.easy_fraction)?;
        let g = &self.feature_geometry;
        frac("label_noise", g.label_noise)?;
        if !(self.bernoulli_p > 0.0 && self.bernoulli_p < 1.0) {
            return Err(Error::Config(format!(
                "bernoulli_p must lie in (0, 1), got {}",
                self.bernoulli_p
            )));
        }
        if self.pool_size == 0 || self.pool_size >= (1 << 31) {
            return Err(Error::Config(format!(
                "pool_size {} out of range",
                self.pool_size
            )));
        }
        if self.answer_count < 2 || self.feature_dim == 0 {
            return Err(Error::Config(
                "need answer_count >= 2 and feature_dim >= 1".into(),
            ));
        }
        if self.kind == ScenarioKind::Imbalanced && !(1..self.feature_dim).contains(&g.target_dims)
        {
            return Err(Error::Config(format!(
                "target_dims must lie in [1, {}) for the imbalanced regime",
                self.feature_dim
            )));
        }
        if !(g.mid_low < g.mid_high) || !(0.0..1.0).contains(&g.easy_threshold) {
            return Err(Error::Config("invalid difficulty thresholds".into()));
        }
        if !(g.norm_spread >= 0.0) || !(g.easy_scale > 0.0) || !(g.corrupt_scale > 0.0) {
            return Err(Error::Config(
                "norm_spread must be >= 0, easy_scale and corrupt_scale > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Judges answers. Clean problems are deterministic; corrupted ones draw a
/// Bernoulli reward from the caller's stream, ignoring the answer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardOracle {
    corruption_map: BTreeMap<u64, Corruption>,
}

impl RewardOracle {
    pub fn from_problems(problems: &[Problem]) -> Result<Self> {
        let mut oracle = Self::default();
        oracle.extend(problems)?;
        Ok(oracle)
    }

    pub fn extend(&mut self, problems: &[Problem]) -> Result<()> {
        for p in problems {
            let c = p.corruption.ok_or_else(|| {
                Error::Input(format!("problem {} has a redacted reward mode", p.id))
            })?;
            self.corruption_map.insert(p.id, c);
        }
        Ok(())
    }

    pub fn corruption(&self, id: u64) -> Option<Corruption> {
        self.corruption_map.get(&id).copied()
    }

    pub fn corrupted_ids(&self) -> Vec<u64> {
        self.corruption_map
            .iter()
            .filter(|(_, c)| matches!(c, Corruption::Bernoulli { .. }))
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn judge<R: Rng + ?Sized>(
        &self,
        problem: &Problem,
        answer: usize,
        rng: &mut R,
    ) -> Result<f64> {
        match self.corruption_map.get(&problem.id) {
            None => Err(Error::Input(format!(
                "reward oracle has no record of problem {}",
                problem.id
            ))),
            Some(Corruption::Clean) => Ok(f64::from(u8::from(answer == problem.reference_answer))),
            Some(Corruption::Bernoulli { p }) => Ok(f64::from(u8::from(rng.gen::<f64>() < *p))),
        }
    }
}

const TEST_ID_BASE: u64 = 1 << 31;
const POOL_ID_BASE: u64 = 1 << 32;

/// Teacher, initial policy and problem generators for one seeded scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub seed: u64,
    teacher: PolicyParams,
    initial_policy: PolicyParams,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (a, d) = (spec.answer_count, spec.feature_dim);
        let mut teacher_rng = rng::stream(seed, "teacher", 0, 0);
        let mut teacher = PolicyParams::zeros(a, d);
        for w in &mut teacher.weights {
            *w = StandardNormal.sample(&mut teacher_rng);
        }
        let g = &spec.feature_geometry;
        let mut initial_policy = PolicyParams::zeros(a, d);
        match spec.kind {
            ScenarioKind::NoisyRewards => {}
            ScenarioKind::Imbalanced => {
                for row in 0..a {
                    for col in g.target_dims..d {
                        initial_policy.weights[row * d + col] =
                            g.offtopic_skill * teacher.weights[row * d + col];
                    }
                }
            }
            ScenarioKind::LowUtility => {
                for (w, t) in initial_policy.weights.iter_mut().zip(&teacher.weights) {
                    *w = g.prior_skill * t;
                }
            }
        }
        Ok(Self {
            spec,
            seed,
            teacher,
            initial_policy,
        })
    }

    pub fn initial_policy(&self) -> &PolicyParams {
        &self.initial_policy
    }

    pub fn teacher(&self) -> &PolicyParams {
        &self.teacher
    }

    /// Feature coordinates occupied by a domain.
    fn support(&self, tag: DomainTag) -> std::ops::Range<usize> {
        let d = self.spec.feature_dim;
        match (self.spec.kind, tag) {
            (ScenarioKind::Imbalanced, DomainTag::Target) => {
                0..self.spec.feature_geometry.target_dims
            }
            (ScenarioKind::Imbalanced, DomainTag::Offtopic) => {
                self.spec.feature_geometry.target_dims..d
            }
            _ => 0..d,
        }
    }

    fn draw_features<R: Rng + ?Sized>(&self, tag: DomainTag, scale: f64, rng: &mut R) -> Vec<f64> {
        let spread = self.spec.feature_geometry.norm_spread;
        let norm = if spread > 0.0 {
            LogNormal::new(0.0, spread)
                .expect("validated spread")
                .sample(rng)
        } else {
            1.0
        };
        let support = self.support(tag);
        (0..self.spec.feature_dim)
            .map(|i| {
                if support.contains(&i) {
                    let z: f64 = StandardNormal.sample(rng);
                    z * norm * scale
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn reference_for<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> usize {
        let a = self.spec.answer_count;
        let d = self.spec.feature_dim;
        let noise = self.spec.feature_geometry.label_noise;
        if noise > 0.0 && rng.gen::<f64>() < noise {
            return rng.gen_range(0..a);
        }
        (0..a)
            .map(|row| {
                let w = &self.teacher.weights[row * d..(row + 1) * d];
                (row, w.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            })
            .fold((0, f64::NEG_INFINITY), |best, (row, z)| {
                if z > best.1 {
                    (row, z)
                } else {
                    best
                }
            })
            .0
    }

    fn draw_problem<R: Rng + ?Sized>(
        &self,
        id: u64,
        tag: DomainTag,
        scale: f64,
        rng: &mut R,
    ) -> Result<Problem> {
        let features = self.draw_features(tag, scale, rng);
        let reference = self.reference_for(&features, rng);
        Problem::new(
            id,
            features,
            self.spec.answer_count,
            reference,
            tag,
            Corruption::Clean,
        )
    }

    /// Redraws until the initial policy's pass probability satisfies `accept`.
    fn draw_calibrated<R: Rng + ?Sized>(
        &self,
        id: u64,
        tag: DomainTag,
        scale: f64,
        accept: impl Fn(f64) -> bool,
        what: &str,
        rng: &mut R,
    ) -> Result<Problem> {
        for _ in 0..MAX_ATTEMPTS {
            let p = self.draw_problem(id, tag, scale, rng)?;
            if accept(AccuracyOracle.problem_accuracy(&self.initial_policy, &p)?) {
                return Ok(p);
            }
        }
        Err(Error::Config(format!(
            "could not generate a {what} problem in {MAX_ATTEMPTS} attempts; check feature_geometry"
        )))
    }

    fn mid_difficulty<R: Rng + ?Sized>(
        &self,
        id: u64,
        tag: DomainTag,
        rng: &mut R,
    ) -> Result<Problem> {
        let g = &self.spec.feature_geometry;
        let (lo, hi) = (g.mid_low, g.mid_high);
        self.draw_calibrated(
            id,
            tag,
            1.0,
            |p| (lo..=hi).contains(&p),
            "mid-difficulty",
            rng,
        )
    }

    /// Held-out problems from the downstream task (always clean, target domain).
    fn downstream(&self, label: &str, base: u64, n: usize) -> Result<Vec<Problem>> {
        let mut rng = rng::stream(self.seed, label, 0, 0);
        (0..n as u64)
            .map(|i| match self.spec.kind {
                ScenarioKind::LowUtility => {
                    self.mid_difficulty(base + i, DomainTag::Target, &mut rng)
                }
                _ => self.draw_problem(base + i, DomainTag::Target, 1.0, &mut rng),
            })
            .collect()
    }

    pub fn validation_set(&self, n: usize) -> Result<Vec<Problem>> {
        self.downstream("validation", 0, n)
    }

    pub fn test_set(&self, n: usize) -> Result<Vec<Problem>> {
        self.downstream("test", TEST_ID_BASE, n)
    }

    fn pool_id(&self, round: u64, index: usize) -> u64 {
        POOL_ID_BASE * (round + 1) + index as u64
    }

    /// Candidate pool for a selection round, drawn from its own stream.
    pub fn pool(&self, round: u64) -> Result<(Vec<Problem>, RewardOracle)> {
        let mut rng = rng::stream(self.seed, "pool", round, 0);
        match self.spec.kind {
            ScenarioKind::NoisyRewards => self.generate_noisy_pool(round, &mut rng),
            ScenarioKind::Imbalanced => self.generate_imbalanced_pool(round, &mut rng),
            ScenarioKind::LowUtility => self.generate_low_utility_pool(round, &mut rng),
        }
    }

    fn finish(problems: Vec<Problem>) -> Result<(Vec<Problem>, RewardOracle)> {
        let oracle = RewardOracle::from_problems(&problems)?;
        Ok((problems, oracle))
    }

    /// Indices `[0, n)` flagged in a uniformly random subset of exactly `count`.
    fn random_flags<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<bool> {
        let mut flags = vec![false; n];
        for i in sample(rng, n, count.min(n)).iter() {
            flags[i] = true;
        }
        flags
    }

    pub fn generate_noisy_pool<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng: &mut R,
    ) -> Result<(Vec<Problem>, RewardOracle)> {
        let n = self.spec.pool_size;
        let corrupt = Self::random_flags(n, fraction_count(n, self.spec.corrupt_fraction), rng);
        let mut problems = Vec::with_capacity(n);
        for (i, &bad) in corrupt.iter().enumerate() {
            let scale = if bad {
                self.spec.feature_geometry.corrupt_scale
            } else {
                1.0
            };
            let mut p = self.draw_problem(self.pool_id(round, i), DomainTag::Target, scale, rng)?;
            if bad {
                p.corruption = Some(Corruption::Bernoulli {
                    p: self.spec.bernoulli_p,
                });
            }
            problems.push(p);
        }
        Self::finish(problems)
    }

    pub fn generate_imbalanced_pool<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng: &mut R,
    ) -> Result<(Vec<Problem>, RewardOracle)> {
        let n = self.spec.pool_size;
        let target = Self::random_flags(n, fraction_count(n, self.spec.target_fraction), rng);
        let problems = target
            .iter()
            .enumerate()
            .map(|(i, &is_target)| {
                let id = self.pool_id(round, i);
                if is_target {
                    self.draw_problem(id, DomainTag::Target, 1.0, rng)
                } else {
                    self.mid_difficulty(id, DomainTag::Offtopic, rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::finish(problems)
    }

    pub fn generate_low_utility_pool<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng: &mut R,
    ) -> Result<(Vec<Problem>, RewardOracle)> {
        let n = self.spec.pool_size;
        let g = &self.spec.feature_geometry;
        let easy = Self::random_flags(n, fraction_count(n, self.spec.easy_fraction), rng);
        let problems = easy
            .iter()
            .enumerate()
            .map(|(i, &is_easy)| {
                let id = self.pool_id(round, i);
                if is_easy {
                    let threshold = g.easy_threshold;
                    self.draw_calibrated(
                        id,
                        DomainTag::Target,
                        g.easy_scale,
                        |p| p > threshold,
                        "easy",
                        rng,
                    )
                } else {
                    self.mid_difficulty(id, DomainTag::Target, rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::finish(problems)
    }
}

const MAX_ATTEMPTS: usize = 100;

/// `round(n · fraction)`, the exact number of flagged problems in a pool.
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::cosine;
    use crate::policy::sample_answers;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: ScenarioKind) -> ScenarioSpec {
        ScenarioSpec {
            kind,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn noisy_pool_counts() {
        let s = Scenario::new(
            ScenarioSpec {
                corrupt_fraction: 0.0,
                ..spec(ScenarioKind::NoisyRewards)
            },
            1,
        )
        .unwrap();
        let (pool, oracle) = s.pool(0).unwrap();
        assert!(pool.iter().all(Problem::is_clean));
        assert!(oracle.corrupted_ids().is_empty());

        let s = Scenario::new(spec(ScenarioKind::NoisyRewards), 1).unwrap();
        let (pool, oracle) = s.pool(0).unwrap();
        assert_eq!(pool.len(), 128);
        assert_eq!(oracle.corrupted_ids().len(), 64);
    }

    #[test]
    fn corrupted_pass_rate_ignores_policy() {
        let s = Scenario::new(spec(ScenarioKind::NoisyRewards), 3).unwrap();
        let (pool, oracle) = s.pool(0).unwrap();
        let bad = pool.iter().find(|p| !p.is_clean()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for params in [PolicyParams::zeros(4, 8), s.teacher().clone()] {
            let n = 10_000;
            let g = sample_answers(&params, bad, n, &mut rng).unwrap();
            let mean = g
                .answers
                .iter()
                .map(|&a| oracle.judge(bad, a, &mut rng).unwrap())
                .sum::<f64>()
                / n as f64;
            let se = (0.25 / n as f64).sqrt();
            assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
        }
    }

    #[test]
    fn imbalanced_pool_counts_and_supports() {
        let s = Scenario::new(
            ScenarioSpec {
                target_fraction: 1.0,
                ..spec(ScenarioKind::Imbalanced)
            },
            2,
        )
        .unwrap();
        assert!(s
            .pool(0)
            .unwrap()
            .0
            .iter()
            .all(|p| p.domain_tag == DomainTag::Target));

        let s = Scenario::new(
            ScenarioSpec {
                pool_size: 200,
                ..spec(ScenarioKind::Imbalanced)
            },
            2,
        )
        .unwrap();
        let (pool, _) = s.pool(0).unwrap();
        assert_eq!(
            pool.iter()
                .filter(|p| p.domain_tag == DomainTag::Target)
                .count(),
            20
        );
        for p in &pool {
            let (on, off) = p.features.split_at(4);
            match p.domain_tag {
                DomainTag::Target => assert!(off.iter().all(|&x| x == 0.0)),
                DomainTag::Offtopic => assert!(on.iter().all(|&x| x == 0.0)),
            }
        }
        assert!(s
            .validation_set(8)
            .unwrap()
            .iter()
            .all(|p| p.domain_tag == DomainTag::Target));
    }

    #[test]
    fn imbalanced_domain_gradients_are_orthogonal() {
        let s = Scenario::new(spec(ScenarioKind::Imbalanced), 5).unwrap();
        let (pool, _) = s.pool(0).unwrap();
        let params = s.initial_policy();
        let mean_grad = |tag| {
            let set: Vec<Problem> = pool
                .iter()
                .filter(|p| p.domain_tag == tag)
                .cloned()
                .collect();
            AccuracyOracle
                .expected_accuracy_gradient(params, &set)
                .unwrap()
        };
        let c = cosine(
            &mean_grad(DomainTag::Target),
            &mean_grad(DomainTag::Offtopic),
        )
        .unwrap();
        assert!(c.abs() < 0.1, "{c}");
    }

    #[test]
    fn low_utility_difficulty_bands() {
        let s = Scenario::new(spec(ScenarioKind::LowUtility), 7).unwrap();
        let (pool, oracle) = s.pool(0).unwrap();
        let init = s.initial_policy();
        let mut easy_norms = Vec::new();
        let mut mid_norms = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in &pool {
            let acc = AccuracyOracle.problem_accuracy(init, p).unwrap();
            let norm = AccuracyOracle
                .expected_accuracy_gradient(init, std::slice::from_ref(p))
                .unwrap()
                .norm();
            if acc > 0.95 {
                let g = sample_answers(init, p, 1000, &mut rng).unwrap();
                let rate = g
                    .answers
                    .iter()
                    .map(|&a| oracle.judge(p, a, &mut rng).unwrap())
                    .sum::<f64>()
                    / 1000.0;
                assert!(rate > 0.95, "{rate}");
                easy_norms.push(norm);
            } else {
                assert!((0.2..=0.8).contains(&acc), "{acc}");
                mid_norms.push(norm);
            }
        }
        assert_eq!(easy_norms.len(), 64);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&easy_norms) < 0.1 * mean(&mid_norms));
    }

    #[test]
    fn low_utility_without_easy_problems() {
        let s = Scenario::new(
            ScenarioSpec {
                easy_fraction: 0.0,
                ..spec(ScenarioKind::LowUtility)
            },
            7,
        )
        .unwrap();
        let (pool, _) = s.pool(0).unwrap();
        for p in &pool {
            let acc = AccuracyOracle
                .problem_accuracy(s.initial_policy(), p)
                .unwrap();
            assert!((0.2..=0.8).contains(&acc));
        }
    }

    #[test]
    fn unreachable_difficulty_is_a_config_error() {
        let mut sp = spec(ScenarioKind::LowUtility);
        sp.feature_geometry.mid_low = 0.999;
        sp.feature_geometry.mid_high = 0.9999;
        let s = Scenario::new(sp, 1).unwrap();
        assert!(matches!(s.pool(0), Err(Error::Config(_))));
    }

    #[test]
    fn judge_cases() {
        let s = Scenario::new(spec(ScenarioKind::NoisyRewards), 1).unwrap();
        let (pool, oracle) = s.pool(0).unwrap();
        let clean = pool.iter().find(|p| p.is_clean()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            oracle
                .judge(clean, clean.reference_answer, &mut rng)
                .unwrap(),
            1.0
        );
        assert_eq!(
            oracle
                .judge(clean, (clean.reference_answer + 1) % 4, &mut rng)
                .unwrap(),
            0.0
        );
        let bad = pool.iter().find(|p| !p.is_clean()).unwrap();
        let mean = (0..10_000)
            .map(|_| oracle.judge(bad, 0, &mut rng).unwrap())
            .sum::<f64>()
            / 1e4;
        assert!((mean - 0.5).abs() < 0.015);
        let mut stranger = clean.clone();
        stranger.id = 12345;
        assert!(matches!(
            oracle.judge(&stranger, 0, &mut rng),
            Err(Error::Input(_))
        ));
        // the oracle reads its own map, not the problem's (possibly redacted) field
        assert!(oracle.judge(&bad.redacted(), 0, &mut rng).is_ok());
    }

    #[test]
    fn corrupted_rewards_uncorrelated_with_correctness() {
        let s = Scenario::new(spec(ScenarioKind::NoisyRewards), 9).unwrap();
        let (pool, oracle) = s.pool(0).unwrap();
        let bad = pool.iter().find(|p| !p.is_clean()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let g = sample_answers(&PolicyParams::zeros(4, 8), bad, n, &mut rng).unwrap();
        let xs: Vec<f64> = g
            .answers
            .iter()
            .map(|&a| f64::from(u8::from(a == bad.reference_answer)))
            .collect();
        let ys: Vec<f64> = g
            .answers
            .iter()
            .map(|&a| oracle.judge(bad, a, &mut rng).unwrap())
            .collect();
        let r = crate::stats::pearson(&xs, &ys).unwrap();
        assert!(r.abs() < 0.03, "{r}");
    }

    #[test]
    fn pools_are_deterministic_and_fresh_per_round() {
        let s = Scenario::new(spec(ScenarioKind::NoisyRewards), 11).unwrap();
        assert_eq!(s.pool(2).unwrap().0, s.pool(2).unwrap().0);
        let (a, _) = s.pool(0).unwrap();
        let (b, _) = s.pool(1).unwrap();
        assert_ne!(a[0].features, b[0].features);
        assert!(a.iter().all(|p| b.iter().all(|q| q.id != p.id)));
    }

    #[test]
    fn spec_validation() {
        assert!(ScenarioSpec {
            corrupt_fraction: 1.5,
            ..ScenarioSpec::default()
        }
        .validate()
        .is_err());
        assert!(ScenarioSpec {
            bernoulli_p: 1.0,
            ..ScenarioSpec::default()
        }
        .validate()
        .is_err());
    }
}
