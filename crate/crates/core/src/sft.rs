//! Supervised cross-entropy baseline on ground-truth answer tokens.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bleu::bleu;
use crate::envs::Environment;
use crate::grpo::kl_estimate;
use crate::math::mean;
use crate::policy::PolicyParams;
use crate::reward::{recite_text, score_unchecked, RewardSpec};
use crate::structured_output::parse_completion;
use crate::train::{check_setup, evaluate, EvalConfig, RunRecord, TrainError};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SftConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Temperature the accuracy column refers to; keep it equal to the GRPO
    /// sampling temperature when comparing curves.
    pub eval_temperature: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            eval_temperature: 0.9,
            seed: 0,
        }
    }
}

/// Minimizes `-log p(supervised tokens)` with plain gradient descent.
/// Records share the GRPO schema: reward, format and BLEU columns describe
/// greedy completions on the batch, KL is measured on the supervised tokens.
pub fn sft_baseline<E: Environment + ?Sized>(
    env: &E,
    mut policy: PolicyParams,
    spec: &RewardSpec,
    cfg: &SftConfig,
    steps: usize,
) -> Result<(Vec<RunRecord>, PolicyParams), TrainError> {
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(TrainError::InvalidConfig("learning_rate must be positive"));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch_size must be >= 1"));
    }
    if !(cfg.eval_temperature > 0.0 && cfg.eval_temperature.is_finite()) {
        return Err(TrainError::InvalidConfig("eval_temperature must be positive"));
    }
    check_setup(env, &policy, spec)?;
    let train = env.train_samples();
    if env.supervised_tokens(&train[0]).is_none() {
        return Err(TrainError::NoSupervision(env.name()));
    }
    let reference = policy.clone();
    let eval = EvalConfig {
        temperature: cfg.eval_temperature,
        seed: cfg.seed,
        ..EvalConfig::default()
    };
    let head = env.head();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(steps);
    for step in 1..=steps {
        let mut grad = vec![0.0; policy.theta.len()];
        let (mut totals, mut formats, mut bleus, mut kls) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..cfg.batch_size {
            let s = &train[rng.random_range(0..train.len())];
            let target = env.supervised_tokens(s).ok_or(TrainError::NoSupervision(env.name()))?;
            let per_token = policy.token_log_probs_and_grads(&s.observation, head, &target, 1.0)?;
            let ref_lp = reference.token_log_probs(&s.observation, head, &target, 1.0)?;
            for ((lp, g), lr) in per_token.iter().zip(&ref_lp) {
                kls.push(kl_estimate(*lp, *lr));
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc -= gi;
                }
            }
            let greedy = policy.greedy(&s.observation, head)?;
            let parsed = parse_completion(&env.render(s, &greedy), env.mode());
            let prompt = env.prompt(s);
            let b = score_unchecked(&parsed, &s.truth, prompt, spec);
            totals.push(b.total);
            formats.push(b.format);
            bleus.push(bleu(recite_text(&parsed, spec), prompt, &spec.bleu));
        }
        let scale = cfg.learning_rate / cfg.batch_size as f64;
        for (t, g) in policy.theta.iter_mut().zip(&grad) {
            *t -= scale * g;
        }
        if policy.theta.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { step });
        }
        records.push(RunRecord {
            step,
            mean_total_reward: mean(&totals),
            mean_format_reward: mean(&formats),
            accuracy: evaluate(env, &policy, spec, &eval)?,
            mean_bleu_vs_prompt: mean(&bleus),
            mean_kl: mean(&kls),
            wall_ms: 0,
        });
    }
    Ok((records, policy))
}
