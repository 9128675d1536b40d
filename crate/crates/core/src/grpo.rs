//! Group-relative policy optimization: normalized advantages, the k3 KL
//! estimator and the clipped surrogate loss with its exact gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{mean, pop_std};
use crate::policy::{Completion, Head, PolicyError, PolicyParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite reward at index {0}")]
    NonFiniteReward(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite log-probability in completion {completion}, token {token}")]
    NonFiniteLogProb { completion: usize, token: usize },
    #[error("completion {0} has mismatched per-token lengths")]
    LengthMismatch(usize),
    #[error("batch holds {completions} completions but {advantages} advantages")]
    AdvantageCount { completions: usize, advantages: usize },
    #[error("invalid grpo config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GrpoConfig {
    /// Completions sampled per prompt.
    pub group_size: usize,
    /// Prompts per optimization step.
    pub prompts_per_step: usize,
    /// KL penalty weight.
    pub beta: f64,
    pub clip_eps: f64,
    pub temperature: f64,
    /// Step size of plain gradient ascent. Billion-parameter runs use 1e-6;
    /// the toy policies here need something near 1e-2 or larger.
    pub learning_rate: f64,
    pub adv_std_floor: f64,
    /// The averaged gradient is rescaled to at most this L2 norm before the
    /// update; 0 disables clipping.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            prompts_per_step: 16,
            beta: 0.04,
            clip_eps: 0.2,
            temperature: 0.9,
            learning_rate: 1e-2,
            adv_std_floor: 1e-4,
            max_grad_norm: 1.0,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::InvalidConfig("group_size must be >= 2"));
        }
        if self.prompts_per_step == 0 {
            return Err(GrpoError::InvalidConfig("prompts_per_step must be >= 1"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GrpoError::InvalidConfig("beta must be finite and >= 0"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GrpoError::InvalidConfig("clip_eps must lie in (0, 1)"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GrpoError::InvalidConfig("temperature must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GrpoError::InvalidConfig("learning_rate must be positive"));
        }
        if !(self.adv_std_floor >= 0.0 && self.adv_std_floor.is_finite()) {
            return Err(GrpoError::InvalidConfig("adv_std_floor must be >= 0"));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return Err(GrpoError::InvalidConfig("max_grad_norm must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `(r_i - mean(r)) / (popstd(r) + floor)`.
pub fn group_advantages(rewards: &[f64], floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(i));
    }
    // the mean of equal values can round away from them
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    let denom = pop_std(rewards) + floor;
    if denom == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / denom).collect())
}

/// k3 estimator of `KL(pi_theta || pi_ref)` for one token:
/// `rho - ln(rho) - 1` with `rho = pi_ref / pi_theta`.
pub fn kl_estimate(logp_theta: f64, logp_ref: f64) -> f64 {
    let log_rho = logp_ref - logp_theta;
    // exp_m1 keeps precision for rho near 1
    (libm::expm1(log_rho) - log_rho).max(0.0)
}

/// One prompt with its sampled group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub prompt_id: usize,
    pub context: Vec<f64>,
    pub head: Head,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Clipped-surrogate loss with KL penalty for one group, and its gradient
/// w.r.t. `policy.theta`. Per-token ratios are taken against `logp_old`,
/// the KL against `logp_ref`; current log-probabilities are recomputed from
/// `policy`.
pub fn grpo_loss(batch: &GroupBatch, policy: &PolicyParams, cfg: &GrpoConfig) -> Result<(f64, Vec<f64>), GrpoError> {
    let n = batch.completions.len();
    if n == 0 {
        return Err(GrpoError::EmptyBatch);
    }
    if batch.advantages.len() != n {
        return Err(GrpoError::AdvantageCount {
            completions: n,
            advantages: batch.advantages.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; policy.theta.len()];
    for (i, (c, &adv)) in batch.completions.iter().zip(&batch.advantages).enumerate() {
        let len = c.tokens.len();
        if len == 0 || c.logp_ref.len() != len || c.logp_old.len() != len {
            return Err(GrpoError::LengthMismatch(i));
        }
        for (t, (a, b)) in c.logp_ref.iter().zip(&c.logp_old).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(GrpoError::NonFiniteLogProb { completion: i, token: t });
            }
        }
        let per_token = policy.token_log_probs_and_grads(&batch.context, batch.head, &c.tokens, cfg.temperature)?;
        let scale = 1.0 / (n as f64 * len as f64);
        for (t, (logp, g)) in per_token.iter().enumerate() {
            let ratio = libm::exp(logp - c.logp_old[t]);
            let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            let unclipped_obj = ratio * adv;
            let clipped_obj = clipped * adv;
            // d(objective)/d(logp) for this token
            let (surrogate, mut coeff) = if unclipped_obj <= clipped_obj {
                (unclipped_obj, ratio * adv)
            } else {
                (clipped_obj, 0.0)
            };
            let ref_ratio = libm::exp(c.logp_ref[t] - logp);
            let kl = kl_estimate(*logp, c.logp_ref[t]);
            coeff -= cfg.beta * (1.0 - ref_ratio);
            loss -= scale * (surrogate - cfg.beta * kl);
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc -= scale * coeff * gi;
            }
        }
    }
    Ok((loss, grad))
}
