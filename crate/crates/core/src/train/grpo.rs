//! Group-relative clipped policy objective with a KL anchor.
//!
//! For a group of rollouts on one document with advantages `A_i`:
//!
//! `J = 1/G Σ_i 1/|y_i| Σ_t [ min(ρ_it A_i, clip(ρ_it, 1-ε, 1+ε) A_i) - β KL_it ]`
//!
//! where `ρ_it` is the ratio of the token's probability under the current and
//! the sampling policy and `KL_it` the Bernoulli KL between the current and the
//! reference policy at that token. Forced tokens are skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{log_sigmoid, sigmoid};

use super::features::PreparedDoc;
use super::policy::{token_features, Decision, PolicyParams, Rollout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub penalty_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub budget: usize,
    pub std_floor: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.001,
            penalty_lambda: 0.25,
            learning_rate: 0.05,
            epochs: 5,
            budget: 3,
            std_floor: 1e-8,
            seed: 7,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.group_size < 2 {
            return fail(format!("group size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail(format!("clip epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.penalty_lambda >= 0.0 && self.penalty_lambda.is_finite()) {
            return fail(format!("penalty lambda must be non-negative, got {}", self.penalty_lambda));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return fail(format!("kl beta must be non-negative, got {}", self.kl_beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.budget == 0 {
            return fail("budget must be positive".into());
        }
        if self.std_floor.is_nan() || self.std_floor < 0.0 {
            return fail(format!("std floor must be non-negative, got {}", self.std_floor));
        }
        Ok(())
    }
}

/// Z-scores with the population standard deviation; all zeros when the
/// deviation is below `std_floor`.
pub fn normalize_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < std_floor || sd == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / sd).collect()
}

/// Rollouts sampled on one document with their advantages.
#[derive(Debug, Clone, Copy)]
pub struct GroupSample<'a> {
    pub doc: &'a PreparedDoc,
    pub rollouts: &'a [Rollout],
    pub advantages: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub surrogate: f64,
    /// Mean per-token KL to the reference policy, aggregated like the surrogate.
    pub kl: f64,
    /// Share of free tokens whose ratio lies outside `[1-ε, 1+ε]`.
    pub clip_fraction: f64,
    pub grad: PolicyParams,
}

/// Exact Bernoulli KL between logits `z` and `z_ref`.
pub fn bernoulli_kl(z: f64, z_ref: f64) -> f64 {
    let p = sigmoid(z);
    let kl = p * (log_sigmoid(z) - log_sigmoid(z_ref)) + (1.0 - p) * (log_sigmoid(-z) - log_sigmoid(-z_ref));
    kl.max(0.0)
}

fn chosen(z: f64, d: Decision) -> f64 {
    if d.is_positive() {
        log_sigmoid(z)
    } else {
        log_sigmoid(-z)
    }
}

/// Objective and analytic gradient at `params`, with ratios taken against
/// `old` and the KL against `reference`.
pub fn grpo_objective(
    params: &PolicyParams,
    reference: &PolicyParams,
    old: &PolicyParams,
    group: GroupSample<'_>,
    cfg: &GrpoConfig,
) -> Objective {
    let eps = cfg.clip_epsilon;
    let mut grad = PolicyParams::zeros();
    let mut surrogate = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    let g = group.rollouts.len().max(1) as f64;
    for (r, &a) in group.rollouts.iter().zip(group.advantages) {
        let free = r.free_tokens().max(1) as f64;
        let w = 1.0 / (g * free);
        for (t, (&d, &f)) in r.decisions.iter().zip(&r.forced).enumerate() {
            if f {
                continue;
            }
            tokens += 1;
            let (z, x) = token_features(params, group.doc, t);
            let z_old = token_features(old, group.doc, t).0;
            let z_ref = token_features(reference, group.doc, t).0;
            let rho = (chosen(z, d) - chosen(z_old, d)).exp();
            let p = sigmoid(z);
            let y = if d.is_positive() { 1.0 } else { 0.0 };

            let unclipped = rho * a;
            let clipped_val = rho.clamp(1.0 - eps, 1.0 + eps) * a;
            surrogate += w * unclipped.min(clipped_val);
            let outside = rho > 1.0 + eps || rho < 1.0 - eps;
            if outside {
                clipped += 1;
            }
            let flat = (a > 0.0 && rho > 1.0 + eps) || (a < 0.0 && rho < 1.0 - eps);
            let mut dz = if flat { 0.0 } else { a * rho * (y - p) };

            kl_total += w * bernoulli_kl(z, z_ref);
            dz -= cfg.kl_beta * (z - z_ref) * p * (1.0 - p);

            let gw = if t == 0 { &mut grad.gate_weights } else { &mut grad.include_weights };
            for (gi, xi) in gw.iter_mut().zip(x) {
                *gi += w * dz * xi;
            }
        }
    }
    Objective {
        value: surrogate - cfg.kl_beta * kl_total,
        surrogate,
        kl: kl_total,
        clip_fraction: if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 },
        grad,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Objective at the pre-step parameters.
    pub objective: Objective,
    pub params: PolicyParams,
    /// Clip fraction of the updated parameters against the sampling policy.
    pub clip_fraction_after: f64,
}

/// One gradient-ascent step. `step` only labels a failure report.
pub fn grpo_step(
    params: &PolicyParams,
    reference: &PolicyParams,
    old: &PolicyParams,
    group: GroupSample<'_>,
    cfg: &GrpoConfig,
    step: usize,
) -> Result<StepOutcome> {
    let objective = grpo_objective(params, reference, old, group, cfg);
    let next = params.add_scaled(&objective.grad, cfg.learning_rate);
    if !objective.grad.is_finite() || !next.is_finite() || !objective.value.is_finite() {
        let dump = format!(
            "params={:?} grad={:?} advantages={:?} doc={}",
            params.to_flat(),
            objective.grad.to_flat(),
            group.advantages,
            group.doc.doc_id
        );
        log::error!("non-finite update at step {step}: {dump}");
        return Err(Error::NonFiniteGradient { step, dump });
    }
    let clip_fraction_after = grpo_objective(&next, reference, old, group, cfg).clip_fraction;
    Ok(StepOutcome {
        objective,
        params: next,
        clip_fraction_after,
    })
}

/// Smallest distance between any token ratio and a clip boundary.
pub fn clip_margin(params: &PolicyParams, old: &PolicyParams, group: GroupSample<'_>, eps: f64) -> f64 {
    let mut m = f64::INFINITY;
    for r in group.rollouts {
        for (t, (&d, &f)) in r.decisions.iter().zip(&r.forced).enumerate() {
            if f {
                continue;
            }
            let z = token_features(params, group.doc, t).0;
            let z_old = token_features(old, group.doc, t).0;
            let rho = (chosen(z, d) - chosen(z_old, d)).exp();
            m = m.min((rho - (1.0 + eps)).abs()).min((rho - (1.0 - eps)).abs());
        }
    }
    m
}
