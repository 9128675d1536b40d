//! Small differentiable policies with exact log-probabilities and gradients.
//!
//! Observations are flat `f64` slices whose layout depends on the
//! architecture:
//!
//! * `SoftmaxBandit`: `features` values; one token from `actions`.
//! * `SeqSoftmax`: `think_len` views of `features` values each. Think token
//!   `p` is drawn from a linear softmax over view `p`; the final answer token
//!   is a linear softmax over the bag of emitted think tokens.
//! * `SharedBackbone`: `regions` rows of `region_features + classes` values
//!   (region descriptor, then per-class evidence). Attention scores
//!   `s_r = a_r + w . f_r` drive both heads: `Localize` samples a region from
//!   `softmax(s)`, `Classify` scores classes with the attention-weighted
//!   evidence `sum_r softmax(s)_r e_r`.
//!
//! All log-probabilities are taken at the sampling temperature.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::{argmax, dot, log_softmax, softmax};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("token {token} at step {step} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { step: usize, token: usize, vocab: usize },
    #[error("expected {expected} tokens, got {got}")]
    SequenceLength { expected: usize, got: usize },
    #[error("observation has {got} values, architecture expects {expected}")]
    ContextLength { expected: usize, got: usize },
    #[error("head {head:?} is not available on {arch}")]
    WrongHead { head: Head, arch: &'static str },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("parameter vector has {got} entries, architecture expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
}

/// Policy architecture and its dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Arch {
    SoftmaxBandit {
        actions: usize,
        features: usize,
    },
    SeqSoftmax {
        think_len: usize,
        vocab: usize,
        answers: usize,
        features: usize,
    },
    SharedBackbone {
        regions: usize,
        region_features: usize,
        classes: usize,
    },
}

/// Which output head a query uses. Only `SharedBackbone` has two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Head {
    Answer,
    Localize,
    Classify,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::SoftmaxBandit { .. } => "softmax_bandit",
            Arch::SeqSoftmax { .. } => "seq_softmax",
            Arch::SharedBackbone { .. } => "shared_backbone",
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Arch::SoftmaxBandit { actions, features } => actions * (features + 1),
            Arch::SeqSoftmax {
                think_len,
                vocab,
                answers,
                features,
            } => think_len * vocab * (features + 1) + answers * (vocab + 1),
            Arch::SharedBackbone {
                regions,
                region_features,
                ..
            } => regions + region_features,
        }
    }

    pub fn context_len(&self) -> usize {
        match *self {
            Arch::SoftmaxBandit { features, .. } => features,
            Arch::SeqSoftmax { think_len, features, .. } => think_len * features,
            Arch::SharedBackbone {
                regions,
                region_features,
                classes,
            } => regions * (region_features + classes),
        }
    }

    /// Number of tokens in one completion.
    pub fn steps(&self) -> usize {
        match *self {
            Arch::SeqSoftmax { think_len, .. } => think_len + 1,
            _ => 1,
        }
    }

    fn check_head(&self, head: Head) -> Result<(), PolicyError> {
        let ok = match self {
            Arch::SharedBackbone { .. } => head != Head::Answer,
            _ => head == Head::Answer,
        };
        if ok {
            Ok(())
        } else {
            Err(PolicyError::WrongHead { head, arch: self.name() })
        }
    }

    fn check_context(&self, ctx: &[f64]) -> Result<(), PolicyError> {
        let expected = self.context_len();
        if ctx.len() != expected {
            return Err(PolicyError::ContextLength {
                expected,
                got: ctx.len(),
            });
        }
        Ok(())
    }
}

/// Parameter vector of a toy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

/// Tokens drawn from a policy and their log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub tokens: Vec<usize>,
    pub logp: Vec<f64>,
}

/// One rollout with per-token log-probabilities under the current, reference
/// and sampling-time policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tokens: Vec<usize>,
    pub logp_theta: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub rendered: String,
}

fn check_temperature(t: f64) -> Result<(), PolicyError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::BadTemperature(t))
    }
}

/// Draws an index from log-probabilities by inversion.
pub fn sample_index<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += libm::exp(*lp);
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass past the last bucket
    argmax(logp)
}

impl PolicyParams {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.num_params()],
        }
    }

    pub fn from_theta(arch: Arch, theta: Vec<f64>) -> Result<Self, PolicyError> {
        let p = Self { arch, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let expected = self.arch.num_params();
        if self.theta.len() != expected {
            return Err(PolicyError::ParamLength {
                expected,
                got: self.theta.len(),
            });
        }
        if let Some(i) = self.theta.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite(i));
        }
        Ok(())
    }

    /// Logits for the next token given the tokens emitted so far.
    pub fn step_logits(&self, ctx: &[f64], head: Head, prefix: &[usize]) -> Vec<f64> {
        let th = &self.theta;
        match self.arch {
            Arch::SoftmaxBandit { actions, features } => {
                let bias = actions * features;
                (0..actions)
                    .map(|k| dot(&th[k * features..(k + 1) * features], ctx) + th[bias + k])
                    .collect()
            }
            Arch::SeqSoftmax {
                think_len,
                vocab,
                answers,
                features,
            } => {
                let p = prefix.len();
                if p < think_len {
                    let base = p * vocab * (features + 1);
                    let view = &ctx[p * features..(p + 1) * features];
                    (0..vocab)
                        .map(|v| {
                            let w = base + v * features;
                            dot(&th[w..w + features], view) + th[base + vocab * features + v]
                        })
                        .collect()
                } else {
                    let base = think_len * vocab * (features + 1);
                    let h = bag_of_tokens(prefix, vocab);
                    (0..answers)
                        .map(|k| dot(&th[base + k * vocab..base + (k + 1) * vocab], &h) + th[base + answers * vocab + k])
                        .collect()
                }
            }
            Arch::SharedBackbone {
                regions,
                region_features,
                classes,
            } => {
                let scores = attention_scores(th, ctx, regions, region_features, classes);
                match head {
                    Head::Localize => scores,
                    _ => {
                        let alpha = softmax(&scores);
                        let stride = region_features + classes;
                        (0..classes)
                            .map(|c| {
                                (0..regions)
                                    .map(|r| alpha[r] * ctx[r * stride + region_features + c])
                                    .sum()
                            })
                            .collect()
                    }
                }
            }
        }
    }

    /// Accumulates `sum_k g_k * d logits_k / d theta` into `grad`.
    fn backprop_logits(&self, ctx: &[f64], head: Head, prefix: &[usize], g: &[f64], grad: &mut [f64]) {
        let th = &self.theta;
        match self.arch {
            Arch::SoftmaxBandit { actions, features } => {
                let bias = actions * features;
                for (k, &gk) in g.iter().enumerate() {
                    for (j, x) in ctx.iter().enumerate() {
                        grad[k * features + j] += gk * x;
                    }
                    grad[bias + k] += gk;
                }
            }
            Arch::SeqSoftmax {
                think_len,
                vocab,
                answers,
                features,
            } => {
                let p = prefix.len();
                if p < think_len {
                    let base = p * vocab * (features + 1);
                    let view = &ctx[p * features..(p + 1) * features];
                    for (v, &gv) in g.iter().enumerate() {
                        for (j, x) in view.iter().enumerate() {
                            grad[base + v * features + j] += gv * x;
                        }
                        grad[base + vocab * features + v] += gv;
                    }
                } else {
                    let base = think_len * vocab * (features + 1);
                    let h = bag_of_tokens(prefix, vocab);
                    for (k, &gk) in g.iter().enumerate() {
                        for (v, hv) in h.iter().enumerate() {
                            grad[base + k * vocab + v] += gk * hv;
                        }
                        grad[base + answers * vocab + k] += gk;
                    }
                }
            }
            Arch::SharedBackbone {
                regions,
                region_features,
                classes,
            } => {
                let stride = region_features + classes;
                let ds: Vec<f64> = match head {
                    Head::Localize => g.to_vec(),
                    _ => {
                        let scores = attention_scores(th, ctx, regions, region_features, classes);
                        let alpha = softmax(&scores);
                        let evid = |r: usize, c: usize| ctx[r * stride + region_features + c];
                        let mixed: Vec<f64> = (0..classes)
                            .map(|c| (0..regions).map(|r| alpha[r] * evid(r, c)).sum())
                            .collect();
                        (0..regions)
                            .map(|j| alpha[j] * (0..classes).map(|c| g[c] * (evid(j, c) - mixed[c])).sum::<f64>())
                            .collect()
                    }
                };
                for (r, d) in ds.iter().enumerate() {
                    grad[r] += d;
                    for (i, f) in ctx[r * stride..r * stride + region_features].iter().enumerate() {
                        grad[regions + i] += d * f;
                    }
                }
            }
        }
    }

    fn check(&self, ctx: &[f64], head: Head, temperature: f64) -> Result<(), PolicyError> {
        self.arch.check_head(head)?;
        self.arch.check_context(ctx)?;
        check_temperature(temperature)
    }

    /// Draws one completion at `temperature`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        ctx: &[f64],
        head: Head,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Sampled, PolicyError> {
        self.check(ctx, head, temperature)?;
        let steps = self.arch.steps();
        let mut tokens = Vec::with_capacity(steps);
        let mut logp = Vec::with_capacity(steps);
        for _ in 0..steps {
            let lp = log_softmax(&self.step_logits(ctx, head, &tokens), temperature);
            let t = sample_index(&lp, rng);
            logp.push(lp[t]);
            tokens.push(t);
        }
        Ok(Sampled { tokens, logp })
    }

    /// Highest-probability token at every step.
    pub fn greedy(&self, ctx: &[f64], head: Head) -> Result<Vec<usize>, PolicyError> {
        self.check(ctx, head, 1.0)?;
        let mut tokens = Vec::with_capacity(self.arch.steps());
        for _ in 0..self.arch.steps() {
            let t = argmax(&self.step_logits(ctx, head, &tokens));
            tokens.push(t);
        }
        Ok(tokens)
    }

    /// Per-token log-probabilities of `tokens` at `temperature`.
    pub fn token_log_probs(
        &self,
        ctx: &[f64],
        head: Head,
        tokens: &[usize],
        temperature: f64,
    ) -> Result<Vec<f64>, PolicyError> {
        self.check_tokens(ctx, head, tokens, temperature)?;
        Ok((0..tokens.len())
            .map(|t| log_softmax(&self.step_logits(ctx, head, &tokens[..t]), temperature)[tokens[t]])
            .collect())
    }

    /// Per-token log-probabilities and their gradients w.r.t. `theta`.
    pub fn token_log_probs_and_grads(
        &self,
        ctx: &[f64],
        head: Head,
        tokens: &[usize],
        temperature: f64,
    ) -> Result<Vec<(f64, Vec<f64>)>, PolicyError> {
        self.check_tokens(ctx, head, tokens, temperature)?;
        let n = self.theta.len();
        Ok((0..tokens.len())
            .map(|t| {
                let prefix = &tokens[..t];
                let lp = log_softmax(&self.step_logits(ctx, head, prefix), temperature);
                let g: Vec<f64> = lp
                    .iter()
                    .enumerate()
                    .map(|(k, l)| ((k == tokens[t]) as u8 as f64 - libm::exp(*l)) / temperature)
                    .collect();
                let mut grad = vec![0.0; n];
                self.backprop_logits(ctx, head, prefix, &g, &mut grad);
                (lp[tokens[t]], grad)
            })
            .collect())
    }

    /// Log-probability of the whole sequence and its gradient.
    pub fn log_prob_and_grad(
        &self,
        ctx: &[f64],
        head: Head,
        tokens: &[usize],
        temperature: f64,
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        let per_token = self.token_log_probs_and_grads(ctx, head, tokens, temperature)?;
        let mut grad = vec![0.0; self.theta.len()];
        let mut logp = 0.0;
        for (lp, g) in per_token {
            logp += lp;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((logp, grad))
    }

    /// Raw logits of one head of a shared-backbone policy.
    pub fn shared_backbone_forward(&self, ctx: &[f64], head: Head) -> Result<Vec<f64>, PolicyError> {
        if !matches!(self.arch, Arch::SharedBackbone { .. }) || head == Head::Answer {
            return Err(PolicyError::WrongHead {
                head,
                arch: self.arch.name(),
            });
        }
        self.arch.check_context(ctx)?;
        Ok(self.step_logits(ctx, head, &[]))
    }

    fn check_tokens(&self, ctx: &[f64], head: Head, tokens: &[usize], temperature: f64) -> Result<(), PolicyError> {
        self.check(ctx, head, temperature)?;
        let steps = self.arch.steps();
        if tokens.len() != steps {
            return Err(PolicyError::SequenceLength {
                expected: steps,
                got: tokens.len(),
            });
        }
        for (step, &token) in tokens.iter().enumerate() {
            let vocab = self.vocab_at(step, head);
            if token >= vocab {
                return Err(PolicyError::TokenOutOfVocab { step, token, vocab });
            }
        }
        Ok(())
    }

    fn vocab_at(&self, step: usize, head: Head) -> usize {
        match self.arch {
            Arch::SoftmaxBandit { actions, .. } => actions,
            Arch::SeqSoftmax {
                think_len,
                vocab,
                answers,
                ..
            } => {
                if step < think_len {
                    vocab
                } else {
                    answers
                }
            }
            Arch::SharedBackbone { regions, classes, .. } => match head {
                Head::Localize => regions,
                _ => classes,
            },
        }
    }

    /// Text checkpoint: `#`-prefixed header lines, then one value per line.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("# vrft-policy v1\n");
        out.push_str(&match self.arch {
            Arch::SoftmaxBandit { actions, features } => {
                format!("# arch=softmax_bandit actions={actions} features={features}\n")
            }
            Arch::SeqSoftmax {
                think_len,
                vocab,
                answers,
                features,
            } => format!(
                "# arch=seq_softmax think_len={think_len} vocab={vocab} answers={answers} features={features}\n"
            ),
            Arch::SharedBackbone {
                regions,
                region_features,
                classes,
            } => format!(
                "# arch=shared_backbone regions={regions} region_features={region_features} classes={classes}\n"
            ),
        });
        for v in &self.theta {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, CheckpointError> {
        let mut arch_fields: Option<Vec<(String, String)>> = None;
        let mut theta = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let h = h.trim();
                if h.starts_with("arch=") {
                    arch_fields = Some(
                        h.split_whitespace()
                            .filter_map(|kv| kv.split_once('='))
                            .map(|(k, v)| (k.to_string(), v.to_string()))
                            .collect(),
                    );
                }
                continue;
            }
            let v = line
                .parse::<f64>()
                .map_err(|_| CheckpointError::BadValue { line: i + 1 })?;
            theta.push(v);
        }
        let fields = arch_fields.ok_or(CheckpointError::MissingHeader)?;
        let get = |k: &str| -> Result<usize, CheckpointError> {
            fields
                .iter()
                .find(|(fk, _)| fk == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| CheckpointError::BadHeader(k.to_string()))
        };
        let kind = fields
            .iter()
            .find(|(k, _)| k == "arch")
            .map(|(_, v)| v.as_str())
            .unwrap_or("");
        let arch = match kind {
            "softmax_bandit" => Arch::SoftmaxBandit {
                actions: get("actions")?,
                features: get("features")?,
            },
            "seq_softmax" => Arch::SeqSoftmax {
                think_len: get("think_len")?,
                vocab: get("vocab")?,
                answers: get("answers")?,
                features: get("features")?,
            },
            "shared_backbone" => Arch::SharedBackbone {
                regions: get("regions")?,
                region_features: get("region_features")?,
                classes: get("classes")?,
            },
            other => return Err(CheckpointError::BadHeader(format!("arch={other}"))),
        };
        PolicyParams::from_theta(arch, theta).map_err(CheckpointError::Params)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint has no `# arch=` header")]
    MissingHeader,
    #[error("bad header field `{0}`")]
    BadHeader(String),
    #[error("line {line}: not a number")]
    BadValue { line: usize },
    #[error(transparent)]
    Params(PolicyError),
}

fn bag_of_tokens(tokens: &[usize], vocab: usize) -> Vec<f64> {
    let mut h = vec![0.0; vocab];
    for &t in tokens {
        h[t] += 1.0;
    }
    h
}

fn attention_scores(th: &[f64], ctx: &[f64], regions: usize, region_features: usize, classes: usize) -> Vec<f64> {
    let stride = region_features + classes;
    let w = &th[regions..regions + region_features];
    (0..regions)
        .map(|r| th[r] + dot(w, &ctx[r * stride..r * stride + region_features]))
        .collect()
}
