//! Ordinal grading: each grade is a bump of activity over a row of feature
//! detectors tuned to positions along the grade axis, observations are
//! noisy copies, and the policy answers with an integer.
//!
//! Embedding distance grows with grade distance, so neighbouring grades are
//! the ones most easily confused.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian, EnvError, Environment, Sample};
use crate::policy::Arch;
use crate::reward::{score_unchecked, GroundTruth, RewardSpec};
use crate::structured_output::{parse_completion, render_label, TaskMode};

const THINK: &str = "severity assessment";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OrdinalEnvConfig {
    pub num_grades: usize,
    pub noise_sigma: f64,
    /// Number of detectors, spread evenly over `[0, num_grades - 1]`.
    pub feature_dim: usize,
    /// Peak detector response.
    pub signal: f64,
    /// Width of each detector's tuning curve, in grades.
    pub tuning_width: f64,
    pub samples_per_grade: usize,
    pub eval_per_grade: usize,
    /// Integers the policy may answer with (`0..answer_vocab`); values at or
    /// above `num_grades` are valid integers that match no grade.
    pub answer_vocab: usize,
    pub seed: u64,
}

impl Default for OrdinalEnvConfig {
    fn default() -> Self {
        Self {
            num_grades: 5,
            noise_sigma: 0.8,
            feature_dim: 5,
            signal: 1.0,
            tuning_width: 1.0,
            samples_per_grade: 64,
            eval_per_grade: 100,
            answer_vocab: 50,
            seed: 0,
        }
    }
}

impl OrdinalEnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field, reason| Err(EnvError::InvalidConfig { field, reason });
        if self.num_grades < 3 {
            return bad("num_grades", "must be >= 3");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be finite and >= 0");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be >= 1");
        }
        if !(self.signal > 0.0 && self.signal.is_finite()) {
            return bad("signal", "must be positive");
        }
        if !(self.tuning_width > 0.0 && self.tuning_width.is_finite()) {
            return bad("tuning_width", "must be positive");
        }
        if self.samples_per_grade == 0 || self.eval_per_grade == 0 {
            return bad("samples_per_grade", "train and eval sizes must be >= 1");
        }
        if self.answer_vocab < self.num_grades {
            return bad("answer_vocab", "must be >= num_grades");
        }
        Ok(())
    }

    /// Noise-free embedding of a grade.
    pub fn embed(&self, grade: usize) -> Vec<f64> {
        let span = (self.num_grades - 1) as f64;
        let step = if self.feature_dim > 1 {
            span / (self.feature_dim - 1) as f64
        } else {
            0.0
        };
        let w2 = 2.0 * self.tuning_width * self.tuning_width;
        (0..self.feature_dim)
            .map(|j| {
                let d = grade as f64 - j as f64 * step;
                self.signal * libm::exp(-d * d / w2)
            })
            .collect()
    }

    /// `embed(grade)` plus isotropic Gaussian noise.
    pub fn observe<R: Rng + ?Sized>(&self, grade: usize, rng: &mut R) -> Result<Vec<f64>, EnvError> {
        if grade >= self.num_grades {
            return Err(EnvError::GradeOutOfRange {
                grade,
                num_grades: self.num_grades,
            });
        }
        Ok(self
            .embed(grade)
            .into_iter()
            .map(|v| v + gaussian(rng, self.noise_sigma))
            .collect())
    }

    /// Grade whose embedding is nearest to `x`; the Bayes rule for this
    /// isotropic, equal-prior mixture.
    pub fn nearest_grade(&self, x: &[f64]) -> usize {
        let dist = |g: usize| -> f64 { self.embed(g).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
        (0..self.num_grades)
            .min_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap_or(core::cmp::Ordering::Equal))
            .unwrap_or(0)
    }

    /// Monte-Carlo estimate of the Bayes accuracy ceiling.
    pub fn bayes_accuracy_mc(&self, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hits = (0..draws)
            .filter(|_| {
                let g = rng.random_range(0..self.num_grades);
                let x = self.observe(g, &mut rng).expect("grade in range");
                self.nearest_grade(&x) == g
            })
            .count();
        hits as f64 / draws.max(1) as f64
    }
}

/// Reward used by [`sparse_reward_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Exact,
    Mfrs,
}

impl RewardKind {
    pub fn spec(self) -> RewardSpec {
        match self {
            RewardKind::Exact => RewardSpec::grading_exact(),
            RewardKind::Mfrs => RewardSpec::grading(),
        }
    }
}

pub struct OrdinalEnv {
    cfg: OrdinalEnvConfig,
    train: Vec<Sample>,
    eval: Vec<Sample>,
    prompt: String,
}

fn draw(cfg: &OrdinalEnvConfig, per_grade: usize, stream: u64, tag: &str) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(per_grade * cfg.num_grades);
    for i in 0..per_grade {
        for g in 0..cfg.num_grades {
            out.push(Sample {
                id: format!("ordinal-{tag}-{}", i * cfg.num_grades + g),
                observation: cfg.observe(g, &mut rng).expect("grade in range"),
                truth: GroundTruth::grade(g as i64),
                class: g,
            });
        }
    }
    out
}

impl OrdinalEnv {
    pub fn new(cfg: OrdinalEnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let train = draw(&cfg, cfg.samples_per_grade, 1, "train");
        let eval = draw(&cfg, cfg.eval_per_grade, 2, "eval");
        let prompt = format!(
            "Grade the severity shown in the image on an integer scale from 0 to {}.",
            cfg.num_grades - 1
        );
        Ok(Self { cfg, train, eval, prompt })
    }

    pub fn config(&self) -> &OrdinalEnvConfig {
        &self.cfg
    }

    pub fn arch(&self) -> Arch {
        Arch::SoftmaxBandit {
            actions: self.cfg.answer_vocab,
            features: self.cfg.feature_dim,
        }
    }
}

impl Environment for OrdinalEnv {
    fn name(&self) -> &'static str {
        "ordinal"
    }

    fn mode(&self) -> TaskMode {
        TaskMode::Grading
    }

    fn train_samples(&self) -> &[Sample] {
        &self.train
    }

    fn eval_samples(&self) -> &[Sample] {
        &self.eval
    }

    fn prompt(&self, _sample: &Sample) -> &str {
        &self.prompt
    }

    fn render(&self, _sample: &Sample, tokens: &[usize]) -> String {
        render_label(THINK, &format!("{}", tokens[0]))
    }

    fn supervised_tokens(&self, sample: &Sample) -> Option<Vec<usize>> {
        Some(alloc::vec![sample.class])
    }

    fn accepts(&self, arch: &Arch) -> bool {
        *arch == self.arch()
    }

    fn is_correct(&self, sample: &Sample, tokens: &[usize], _spec: &RewardSpec) -> bool {
        tokens.last().map(|&t| t as i64) == sample.truth.grade
    }
}

/// Probability that all `group_size` rewards of a group are equal when the
/// policy answers uniformly over `0..answer_vocab` and grades are uniform
/// over `0..num_grades`. Rewards go through the full render/parse/score
/// path under `spec`.
pub fn degenerate_group_fraction(num_grades: usize, answer_vocab: usize, group_size: usize, spec: &RewardSpec) -> f64 {
    if num_grades == 0 || answer_vocab == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for g in 0..num_grades {
        let truth = GroundTruth::grade(g as i64);
        let mut values: Vec<(u64, usize)> = Vec::new();
        for a in 0..answer_vocab {
            let p = parse_completion(&render_label(THINK, &format!("{a}")), TaskMode::Grading);
            let r = score_unchecked(&p, &truth, "", spec).total.to_bits();
            match values.iter_mut().find(|(v, _)| *v == r) {
                Some((_, c)) => *c += 1,
                None => values.push((r, 1)),
            }
        }
        total += values
            .iter()
            .map(|&(_, c)| libm::pow(c as f64 / answer_vocab as f64, group_size as f64))
            .sum::<f64>();
    }
    total / num_grades as f64
}

/// Fraction of zero-advantage groups for a fresh uniform policy on `env`.
pub fn sparse_reward_probe(env: &OrdinalEnv, reward: RewardKind, group_size: usize) -> f64 {
    degenerate_group_fraction(env.cfg.num_grades, env.cfg.answer_vocab, group_size, &reward.spec())
}
