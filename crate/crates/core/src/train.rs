//! The GRPO training loop over a synthetic environment.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bleu::bleu;
use crate::envs::{Environment, Sample};
use crate::grpo::{group_advantages, grpo_loss, kl_estimate, GroupBatch, GrpoConfig, GrpoError};
use crate::math::{log_softmax, mean};
use crate::policy::{sample_index, Completion, Head, PolicyError, PolicyParams};
use crate::reward::{detection_reward, recite_text, score_unchecked, GroundTruth, RewardError, RewardSpec};
use crate::structured_output::{parse_completion, parse_grade, ParsedOutput, TaskMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("reward spec is for {spec:?} but environment `{env}` is {mode:?}")]
    ModeMismatch {
        env: &'static str,
        mode: TaskMode,
        spec: TaskMode,
    },
    #[error("policy architecture `{arch}` does not fit environment `{env}`")]
    ArchMismatch { env: &'static str, arch: &'static str },
    #[error("environment `{0}` has no training samples")]
    EmptyTrainSet(&'static str),
    #[error("environment `{0}` has no supervised labels")]
    NoSupervision(&'static str),
    #[error("non-finite parameters after step {step}")]
    NonFinite { step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Metrics logged after every optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunRecord {
    /// 1-based index of the step that produced this row.
    pub step: usize,
    pub mean_total_reward: f64,
    pub mean_format_reward: f64,
    /// Expected accuracy of sampled answers on the eval set after the step.
    pub accuracy: f64,
    pub mean_bleu_vs_prompt: f64,
    /// Mean per-token k3 estimate against the reference policy.
    pub mean_kl: f64,
    /// Filled in by callers that own a clock.
    pub wall_ms: u64,
}

/// Strict correctness: label match, exact grade, or IoU above threshold.
/// Malformed completions are never correct.
pub fn is_correct(p: &ParsedOutput, gt: &GroundTruth, spec: &RewardSpec) -> bool {
    if !p.format_ok {
        return false;
    }
    match spec.mode {
        TaskMode::Classification => crate::reward::accuracy_reward(p, gt) == 1.0,
        TaskMode::Grading => p.label().and_then(parse_grade).is_some() && p.label().and_then(parse_grade) == gt.grade,
        TaskMode::Detection => detection_reward(p, gt, spec) == 1.0,
    }
}

/// Fraction of eval samples answered correctly by greedy decoding.
pub fn greedy_accuracy<E: Environment + ?Sized>(env: &E, policy: &PolicyParams, spec: &RewardSpec) -> Result<f64, TrainError> {
    let samples = env.eval_samples();
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in samples {
        let tokens = policy.greedy(&s.observation, env.head())?;
        if env.is_correct(s, &tokens, spec) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// How [`evaluate`] estimates accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EvalConfig {
    /// Sampling temperature the accuracy refers to.
    pub temperature: f64,
    /// Sampled prefixes per eval sample for multi-token policies.
    pub draws: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: 0.9,
            draws: 4,
            seed: 0,
        }
    }
}

/// Expected exact-match rate of the policy's own sampled answers on the
/// eval set. The final token is marginalized exactly; earlier tokens, if
/// any, are sampled `draws` times from a fixed stream so that successive
/// evaluations share their random numbers.
pub fn evaluate<E: Environment + ?Sized>(
    env: &E,
    policy: &PolicyParams,
    spec: &RewardSpec,
    eval: &EvalConfig,
) -> Result<f64, TrainError> {
    let samples = env.eval_samples();
    if samples.is_empty() {
        return Ok(0.0);
    }
    let head = env.head();
    let prefix_len = policy.arch.steps() - 1;
    let draws = if prefix_len == 0 { 1 } else { eval.draws.max(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
    rng.set_stream(7);
    let mut total = 0.0;
    for s in samples {
        for _ in 0..draws {
            let mut tokens = Vec::with_capacity(prefix_len + 1);
            for _ in 0..prefix_len {
                let lp = log_softmax(&policy.step_logits(&s.observation, head, &tokens), eval.temperature);
                tokens.push(sample_index(&lp, &mut rng));
            }
            let lp = log_softmax(&policy.step_logits(&s.observation, head, &tokens), eval.temperature);
            for (a, l) in lp.iter().enumerate() {
                tokens.push(a);
                if env.is_correct(s, &tokens, spec) {
                    total += libm::exp(*l);
                }
                tokens.pop();
            }
        }
    }
    Ok(total / (samples.len() * draws) as f64)
}

pub(crate) fn check_setup<E: Environment + ?Sized>(
    env: &E,
    policy: &PolicyParams,
    spec: &RewardSpec,
) -> Result<(), TrainError> {
    spec.validate()?;
    if spec.mode != env.mode() {
        return Err(TrainError::ModeMismatch {
            env: env.name(),
            mode: env.mode(),
            spec: spec.mode,
        });
    }
    if !env.accepts(&policy.arch) {
        return Err(TrainError::ArchMismatch {
            env: env.name(),
            arch: policy.arch.name(),
        });
    }
    policy.validate()?;
    if env.train_samples().is_empty() {
        return Err(TrainError::EmptyTrainSet(env.name()));
    }
    for s in env.train_samples().iter().chain(env.eval_samples()) {
        s.truth.check(spec.mode)?;
    }
    Ok(())
}

/// GRPO with one inner epoch per batch: ratios start at 1 and the reference
/// policy is the one passed to [`GrpoTrainer::new`].
pub struct GrpoTrainer<'e, E: Environment + ?Sized> {
    env: &'e E,
    spec: RewardSpec,
    cfg: GrpoConfig,
    policy: PolicyParams,
    reference: PolicyParams,
    rng: ChaCha8Rng,
    steps_done: usize,
}

struct Rollout {
    completion: Completion,
    total: f64,
    format: f64,
    bleu: f64,
}

impl<'e, E: Environment + ?Sized> GrpoTrainer<'e, E> {
    pub fn new(env: &'e E, policy: PolicyParams, spec: RewardSpec, cfg: GrpoConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        check_setup(env, &policy, &spec)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            env,
            spec,
            cfg,
            reference: policy.clone(),
            policy,
            rng,
            steps_done: 0,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn into_policy(self) -> PolicyParams {
        self.policy
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    /// Eval accuracy of the current policy at the sampling temperature.
    pub fn evaluate(&self) -> Result<f64, TrainError> {
        let eval = EvalConfig {
            temperature: self.cfg.temperature,
            draws: EvalConfig::default().draws,
            seed: self.cfg.seed,
        };
        evaluate(self.env, &self.policy, &self.spec, &eval)
    }

    fn rollout(&mut self, sample: &Sample, head: Head) -> Result<Rollout, TrainError> {
        let drawn = self
            .policy
            .sample(&sample.observation, head, self.cfg.temperature, &mut self.rng)?;
        let logp_ref = self
            .reference
            .token_log_probs(&sample.observation, head, &drawn.tokens, self.cfg.temperature)?;
        let rendered: String = self.env.render(sample, &drawn.tokens);
        let parsed = parse_completion(&rendered, self.env.mode());
        let prompt = self.env.prompt(sample);
        let b = score_unchecked(&parsed, &sample.truth, prompt, &self.spec);
        let similarity = bleu(recite_text(&parsed, &self.spec), prompt, &self.spec.bleu);
        Ok(Rollout {
            completion: Completion {
                tokens: drawn.tokens,
                logp_theta: drawn.logp.clone(),
                logp_ref,
                logp_old: drawn.logp,
                rendered,
            },
            total: b.total,
            format: b.format,
            bleu: similarity,
        })
    }

    /// Samples a batch of groups, takes one gradient step and evaluates.
    pub fn step(&mut self) -> Result<RunRecord, TrainError> {
        let env = self.env;
        let train = env.train_samples();
        let head = env.head();
        let mut grad = vec![0.0; self.policy.theta.len()];
        let (mut totals, mut formats, mut bleus, mut kls) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..self.cfg.prompts_per_step {
            let idx = self.rng.random_range(0..train.len());
            let sample = &train[idx];
            let mut completions = Vec::with_capacity(self.cfg.group_size);
            let mut rewards = Vec::with_capacity(self.cfg.group_size);
            for _ in 0..self.cfg.group_size {
                let r = self.rollout(sample, head)?;
                totals.push(r.total);
                formats.push(r.format);
                bleus.push(r.bleu);
                for (lt, lr) in r.completion.logp_theta.iter().zip(&r.completion.logp_ref) {
                    kls.push(kl_estimate(*lt, *lr));
                }
                rewards.push(r.total);
                completions.push(r.completion);
            }
            let advantages = group_advantages(&rewards, self.cfg.adv_std_floor)?;
            let batch = GroupBatch {
                prompt_id: idx,
                context: sample.observation.clone(),
                head,
                completions,
                rewards,
                advantages,
            };
            let (_, g) = grpo_loss(&batch, &self.policy, &self.cfg)?;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let mut scale = 1.0 / self.cfg.prompts_per_step as f64;
        let norm = scale * libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if self.cfg.max_grad_norm > 0.0 && norm > self.cfg.max_grad_norm {
            scale *= self.cfg.max_grad_norm / norm;
        }
        scale *= self.cfg.learning_rate;
        for (t, g) in self.policy.theta.iter_mut().zip(&grad) {
            *t -= scale * g;
        }
        self.steps_done += 1;
        if self.policy.theta.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { step: self.steps_done });
        }
        Ok(RunRecord {
            step: self.steps_done,
            mean_total_reward: mean(&totals),
            mean_format_reward: mean(&formats),
            accuracy: self.evaluate()?,
            mean_bleu_vs_prompt: mean(&bleus),
            mean_kl: mean(&kls),
            wall_ms: 0,
        })
    }

    pub fn run(&mut self, steps: usize) -> Result<Vec<RunRecord>, TrainError> {
        (0..steps).map(|_| self.step()).collect()
    }
}

/// First step (1-based) at which the trailing `window`-step mean reward has
/// covered `fraction` of the way from its starting value to the plateau,
/// the mean over the final tenth of the run. Returns `records.len() + 1` if
/// that never happens and `None` for runs shorter than ten steps.
pub fn steps_to_plateau(records: &[RunRecord], fraction: f64, window: usize) -> Option<usize> {
    let n = records.len();
    if n < 10 {
        return None;
    }
    let window = window.max(1);
    let rewards: Vec<f64> = records.iter().map(|r| r.mean_total_reward).collect();
    let smooth = |i: usize| mean(&rewards[i.saturating_sub(window - 1)..=i]);
    let plateau = mean(&rewards[n - n / 10..]);
    let start = smooth(0);
    let target = start + fraction * (plateau - start);
    let reached = (0..n).position(|i| {
        let v = smooth(i);
        if plateau >= start {
            v >= target
        } else {
            v <= target
        }
    });
    Some(reached.map_or(n + 1, |i| i + 1))
}

/// Trains `policy` for `steps` GRPO steps and returns one record per step.
pub fn train<E: Environment + ?Sized>(
    env: &E,
    policy: PolicyParams,
    spec: RewardSpec,
    cfg: GrpoConfig,
    steps: usize,
) -> Result<(Vec<RunRecord>, PolicyParams), TrainError> {
    let mut t = GrpoTrainer::new(env, policy, spec, cfg)?;
    let records = t.run(steps)?;
    Ok((records, t.into_policy()))
}
