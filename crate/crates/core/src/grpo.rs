//! GRPO advantages, objectives and the optimizer step.
//!
//! Every gradient here is an ascent direction on expected reward; the
//! optimizer adds it to the weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::GradientVec;
use crate::policy::{log_softmax, logits, score_from_probs, PolicyParams, Problem, RolloutGroup};

/// Baseline subtracted from each reward before (optional) normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// In-group mean, including the sample itself (standard GRPO).
    #[default]
    GroupMean,
    /// Mean of the other `k - 1` rewards; independent of the sample's own answer.
    LeaveOneOut,
    /// No baseline.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adamw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    /// Added to the group standard deviation in the advantage denominator.
    pub epsilon_adv: f64,
    /// Ratio clipping half-width.
    pub epsilon_clip: f64,
    pub beta_kl: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub baseline_mode: BaselineMode,
    /// Divide centered rewards by `std + epsilon_adv`.
    pub normalize_advantages: bool,
    /// Optimizer steps per rollout batch. Values above 1 reuse rollouts and
    /// make the clipped objective active.
    pub epochs: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon_adv: 1e-8,
            epsilon_clip: 0.2,
            beta_kl: 0.0,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adamw,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            baseline_mode: BaselineMode::GroupMean,
            normalize_advantages: true,
            epochs: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon_adv > 0.0) {
            return bad(format!(
                "epsilon_adv must be positive, got {}",
                self.epsilon_adv
            ));
        }
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 1.0) {
            return bad(format!(
                "epsilon_clip must lie in (0, 1), got {}",
                self.epsilon_clip
            ));
        }
        if !(self.beta_kl >= 0.0) {
            return bad(format!(
                "beta_kl must be non-negative, got {}",
                self.beta_kl
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Group statistics and advantages for one rollout group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub raw_centered: Vec<f64>,
    pub normalized: Vec<f64>,
    pub group_mean: f64,
    /// Population standard deviation (divides by `k`).
    pub group_std: f64,
    pub epsilon_adv: f64,
}

pub fn compute_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<AdvantageSet> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::Input(format!(
            "group statistics need at least 2 rewards, got {k}"
        )));
    }
    let mean = rewards.iter().sum::<f64>() / k as f64;
    let all_equal = rewards.iter().all(|&r| r == rewards[0]);
    let raw_centered: Vec<f64> = if all_equal {
        vec![0.0; k]
    } else {
        rewards.iter().map(|r| r - mean).collect()
    };
    let std = (raw_centered.iter().map(|c| c * c).sum::<f64>() / k as f64).sqrt();
    let denom = std + cfg.epsilon_adv;
    let normalized = raw_centered.iter().map(|c| c / denom).collect();
    Ok(AdvantageSet {
        raw_centered,
        normalized,
        group_mean: mean,
        group_std: std,
        epsilon_adv: cfg.epsilon_adv,
    })
}

/// Per-sample advantages under the configured baseline and normalization.
pub fn advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>> {
    let set = compute_advantages(rewards, cfg)?;
    let k = rewards.len() as f64;
    let total: f64 = rewards.iter().sum();
    let centered: Vec<f64> = match cfg.baseline_mode {
        BaselineMode::GroupMean => set.raw_centered.clone(),
        BaselineMode::LeaveOneOut => rewards
            .iter()
            .map(|r| r - (total - r) / (k - 1.0))
            .collect(),
        BaselineMode::None => rewards.to_vec(),
    };
    if !cfg.normalize_advantages {
        return Ok(centered);
    }
    let denom = set.group_std + cfg.epsilon_adv;
    Ok(centered.into_iter().map(|c| c / denom).collect())
}

fn check_group(problem: &Problem, group: &RolloutGroup, advantages: &[f64]) -> Result<()> {
    if group.problem_id != problem.id {
        return Err(Error::Input(format!(
            "group for problem {} used with problem {}",
            group.problem_id, problem.id
        )));
    }
    if group.answers.is_empty() || advantages.len() != group.answers.len() {
        return Err(Error::Input(format!(
            "{} advantages for a group of {} answers",
            advantages.len(),
            group.answers.len()
        )));
    }
    if let Some(&a) = group.answers.iter().find(|&&a| a >= problem.answer_count) {
        return Err(Error::Input(format!(
            "answer {a} out of range for problem {}",
            problem.id
        )));
    }
    Ok(())
}

fn check_snapshot(params: &PolicyParams, group: &RolloutGroup) -> Result<()> {
    if params.version != group.policy_snapshot_tag {
        return Err(Error::StaleRollouts {
            group: group.policy_snapshot_tag,
            policy: params.version,
        });
    }
    Ok(())
}

/// `(1/k) Σ_j A_j ∇ log π(y_j | x)`, the on-policy GRPO gradient with clipping and KL dropped.
pub fn surrogate_gradient(
    params: &PolicyParams,
    problem: &Problem,
    group: &RolloutGroup,
    advantages: &[f64],
) -> Result<GradientVec> {
    check_snapshot(params, group)?;
    check_group(problem, group, advantages)?;
    let probs: Vec<f64> = log_softmax(&logits(params, problem)?)
        .into_iter()
        .map(f64::exp)
        .collect();
    let d = problem.features.len();
    // Σ_j A_j (e_{y_j} - p) ⊗ x = (Σ_j A_j e_{y_j} - (Σ_j A_j) p) ⊗ x
    let mut coef = vec![0.0; probs.len()];
    let mut adv_total = 0.0;
    for (&y, &adv) in group.answers.iter().zip(advantages) {
        coef[y] += adv;
        adv_total += adv;
    }
    let k = group.answers.len() as f64;
    let mut out = vec![0.0; probs.len() * d];
    for (a, p) in probs.iter().enumerate() {
        let c = (coef[a] - adv_total * p) / k;
        for (slot, x) in out[a * d..(a + 1) * d].iter_mut().zip(&problem.features) {
            *slot = c * x;
        }
    }
    Ok(GradientVec(out))
}

/// Frozen policy snapshot anchoring the KL penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy(PolicyParams);

impl ReferencePolicy {
    pub fn new(params: &PolicyParams) -> Self {
        Self(params.clone())
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

/// Exact categorical `KL(π_θ(·|x) ‖ π_ref(·|x))`.
pub fn kl_divergence(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    problem: &Problem,
) -> Result<f64> {
    let lp = log_softmax(&logits(params, problem)?);
    let lq = log_softmax(&logits(reference.params(), problem)?);
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    Ok(kl.max(0.0))
}

fn kl_gradient(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    problem: &Problem,
) -> Result<GradientVec> {
    let lp = log_softmax(&logits(params, problem)?);
    let lq = log_softmax(&logits(reference.params(), problem)?);
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    let d = problem.features.len();
    let mut out = vec![0.0; lp.len() * d];
    for (a, (la, lb)) in lp.iter().zip(&lq).enumerate() {
        let c = la.exp() * (la - lb - kl);
        for (slot, x) in out[a * d..(a + 1) * d].iter_mut().zip(&problem.features) {
            *slot = c * x;
        }
    }
    Ok(GradientVec(out))
}

/// Clipped GRPO objective for one group and its exact gradient.
///
/// `(1/k) Σ_j min(ρ_j A_j, clip(ρ_j, 1-ε, 1+ε) A_j) − β · KL(π_θ ‖ π_ref)` with
/// `ρ_j = π_θ(y_j|x) / π_old(y_j|x)`.
pub fn clipped_loss_and_gradient(
    params: &PolicyParams,
    old_params: &PolicyParams,
    reference: &ReferencePolicy,
    problem: &Problem,
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<(f64, GradientVec)> {
    check_snapshot(old_params, group)?;
    check_group(problem, group, advantages)?;
    let lp = log_softmax(&logits(params, problem)?);
    let lp_old = log_softmax(&logits(old_params, problem)?);
    let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let k = group.answers.len() as f64;
    let (lo, hi) = (1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip);

    let mut objective = 0.0;
    let mut grad = GradientVec::zeros(params.len());
    for (&y, &adv) in group.answers.iter().zip(advantages) {
        let ratio = (lp[y] - lp_old[y]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        if unclipped <= clipped {
            objective += unclipped;
            let score = score_from_probs(&probs, &problem.features, y);
            grad.add_scaled(adv * ratio / k, &score)?;
        } else {
            // clip branch is constant in θ
            objective += clipped;
        }
    }
    objective /= k;
    if cfg.beta_kl > 0.0 {
        objective -= cfg.beta_kl * kl_divergence(params, reference, problem)?;
        grad.add_scaled(-cfg.beta_kl, &kl_gradient(params, reference, problem)?)?;
    }
    Ok((objective, grad))
}

/// Moment estimates carried between optimizer steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }
}

/// Applies one ascent step and bumps the policy's snapshot tag.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut PolicyParams,
    gradient: &GradientVec,
    cfg: &GrpoConfig,
) -> Result<()> {
    if gradient.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer received gradient of length {} for {} weights",
            gradient.len(),
            params.len()
        )));
    }
    if !gradient.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    let lr = cfg.learning_rate;
    state.step += 1;
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (w, g) in params.weights.iter_mut().zip(&gradient.0) {
                *w += lr * g;
            }
        }
        OptimizerKind::Adamw => {
            let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
            let t = state.step as i32;
            let bias1 = 1.0 - b1.powi(t);
            let bias2 = 1.0 - b2.powi(t);
            for i in 0..params.weights.len() {
                let g = gradient.0[i];
                let m = &mut state.first_moment[i];
                *m = b1 * *m + (1.0 - b1) * g;
                let v = &mut state.second_moment[i];
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = state.first_moment[i] / bias1;
                let v_hat = state.second_moment[i] / bias2;
                let w = &mut params.weights[i];
                *w -= lr * cfg.weight_decay * *w;
                *w += lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite weights after optimizer step {}",
            state.step
        )));
    }
    params.version += 1;
    Ok(())
}
