//! A sequence task where the think block can either report evidence or
//! recite a fixed knowledge passage.
//!
//! Think position `p` sees its own noisy view of the class. The policy may
//! emit the finding word for the class it reads there, or the `p`-th word of
//! the knowledge passage. The answer token is chosen from the bag of think
//! tokens only, so every recited position is a discarded view.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian, EnvError, Environment, Sample};
use crate::policy::{Arch, PolicyParams};
use crate::reward::{GroundTruth, RewardSpec};
use crate::structured_output::{render_label, TaskMode};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RecitationEnvConfig {
    /// Total think vocabulary: knowledge words, then one finding word per
    /// class, then filler words.
    pub vocab_size: usize,
    pub knowledge_text: String,
    pub answer_classes: usize,
    pub think_len: usize,
    /// Class signal in each view.
    pub signal: f64,
    pub noise_sigma: f64,
    /// Initial logit bonus for reciting the knowledge word at each position.
    pub recite_prior: f64,
    /// Initial weight from a view's class feature to that class's finding word.
    pub view_gain: f64,
    /// Initial weight from a finding word to its answer.
    pub answer_gain: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

pub const DEFAULT_KNOWLEDGE: &str = "dark irregular pigment network with asymmetric blurred borders";

impl Default for RecitationEnvConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            knowledge_text: DEFAULT_KNOWLEDGE.to_owned(),
            answer_classes: 4,
            think_len: 8,
            signal: 1.0,
            noise_sigma: 1.0,
            recite_prior: 3.0,
            view_gain: 1.0,
            answer_gain: 1.0,
            train_samples: 256,
            eval_samples: 500,
            seed: 0,
        }
    }
}

impl RecitationEnvConfig {
    pub fn knowledge_tokens(&self) -> Vec<String> {
        crate::bleu::tokenize(&self.knowledge_text, crate::bleu::Tokenizer::WhitespaceLower)
    }

    /// Distinct knowledge words in order of first appearance.
    fn knowledge_vocab(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in self.knowledge_tokens() {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field, reason| Err(EnvError::InvalidConfig { field, reason });
        let kv = self.knowledge_vocab();
        if kv.is_empty() {
            return bad("knowledge_text", "must contain at least one word");
        }
        if self.answer_classes < 2 {
            return bad("answer_classes", "must be >= 2");
        }
        if self.vocab_size < kv.len() + self.answer_classes {
            return bad("vocab_size", "must cover the knowledge words and one finding word per class");
        }
        if self.think_len == 0 {
            return bad("think_len", "must be >= 1");
        }
        for (field, v) in [
            ("signal", self.signal),
            ("noise_sigma", self.noise_sigma),
            ("recite_prior", self.recite_prior),
            ("view_gain", self.view_gain),
            ("answer_gain", self.answer_gain),
        ] {
            if !v.is_finite() {
                return Err(EnvError::InvalidConfig {
                    field,
                    reason: "must be finite",
                });
            }
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma", "must be >= 0");
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return bad("train_samples", "train and eval sizes must be >= 1");
        }
        Ok(())
    }
}

pub struct RecitationEnv {
    cfg: RecitationEnvConfig,
    vocab: Vec<String>,
    /// Vocabulary index of the knowledge word each position would recite.
    recite_token: Vec<Option<usize>>,
    class_names: Vec<String>,
    train: Vec<Sample>,
    eval: Vec<Sample>,
}

fn draw(cfg: &RecitationEnvConfig, class_names: &[String], count: usize, stream: u64, tag: &str) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let k = cfg.answer_classes;
    (0..count)
        .map(|i| {
            let y = rng.random_range(0..k);
            let mut obs = vec![0.0; cfg.think_len * k];
            for view in obs.chunks_mut(k) {
                for (c, v) in view.iter_mut().enumerate() {
                    let s = if c == y { cfg.signal } else { 0.0 };
                    *v = s + gaussian(&mut rng, cfg.noise_sigma);
                }
            }
            Sample {
                id: format!("recitation-{tag}-{i}"),
                observation: obs,
                truth: GroundTruth::label(class_names[y].clone()),
                class: y,
            }
        })
        .collect()
}

impl RecitationEnv {
    pub fn new(cfg: RecitationEnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut vocab = cfg.knowledge_vocab();
        let kn = cfg.knowledge_tokens();
        let recite_token = (0..cfg.think_len)
            .map(|p| kn.get(p).and_then(|w| vocab.iter().position(|v| v == w)))
            .collect();
        for c in 0..cfg.answer_classes {
            vocab.push(format!("finding_{c}"));
        }
        let mut filler = 0;
        while vocab.len() < cfg.vocab_size {
            vocab.push(format!("filler_{filler}"));
            filler += 1;
        }
        let class_names: Vec<String> = (0..cfg.answer_classes).map(|c| format!("class_{c}")).collect();
        let train = draw(&cfg, &class_names, cfg.train_samples, 1, "train");
        let eval = draw(&cfg, &class_names, cfg.eval_samples, 2, "eval");
        Ok(Self {
            cfg,
            vocab,
            recite_token,
            class_names,
            train,
            eval,
        })
    }

    pub fn config(&self) -> &RecitationEnvConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn arch(&self) -> Arch {
        Arch::SeqSoftmax {
            think_len: self.cfg.think_len,
            vocab: self.cfg.vocab_size,
            answers: self.cfg.answer_classes,
            features: self.cfg.answer_classes,
        }
    }

    fn finding_token(&self, class: usize) -> usize {
        self.cfg.vocab_size - self.filler_count() - self.cfg.answer_classes + class
    }

    fn filler_count(&self) -> usize {
        self.cfg.vocab_size - self.cfg.knowledge_vocab().len() - self.cfg.answer_classes
    }

    /// Think tokens that copy the knowledge passage where possible, with
    /// finding words for the true class elsewhere.
    pub fn recite_tokens(&self, sample: &Sample) -> Vec<usize> {
        self.recite_token
            .iter()
            .map(|t| t.unwrap_or_else(|| self.finding_token(sample.class)))
            .collect()
    }

    /// Starting policy: each position leans toward reading its view and
    /// toward reciting, and finding words vote for their class.
    pub fn initial_policy(&self) -> PolicyParams {
        let arch = self.arch();
        let (l, v, k) = (self.cfg.think_len, self.cfg.vocab_size, self.cfg.answer_classes);
        let d = k;
        let mut p = PolicyParams::zeros(arch);
        for pos in 0..l {
            let base = pos * v * (d + 1);
            for c in 0..k {
                let f = self.finding_token(c);
                p.theta[base + f * d + c] = self.cfg.view_gain;
            }
            if let Some(t) = self.recite_token[pos] {
                p.theta[base + v * d + t] = self.cfg.recite_prior;
            }
        }
        let base = l * v * (d + 1);
        for c in 0..k {
            p.theta[base + c * v + self.finding_token(c)] = self.cfg.answer_gain;
        }
        p
    }
}

impl Environment for RecitationEnv {
    fn name(&self) -> &'static str {
        "recitation"
    }

    fn mode(&self) -> TaskMode {
        TaskMode::Classification
    }

    fn train_samples(&self) -> &[Sample] {
        &self.train
    }

    fn eval_samples(&self) -> &[Sample] {
        &self.eval
    }

    fn prompt(&self, _sample: &Sample) -> &str {
        &self.cfg.knowledge_text
    }

    fn render(&self, _sample: &Sample, tokens: &[usize]) -> String {
        let (think, answer) = tokens.split_at(tokens.len() - 1);
        let words: Vec<&str> = think.iter().map(|&t| self.vocab[t].as_str()).collect();
        render_label(&words.join(" "), &self.class_names[answer[0]])
    }

    fn supervised_tokens(&self, _sample: &Sample) -> Option<Vec<usize>> {
        None
    }

    fn accepts(&self, arch: &Arch) -> bool {
        *arch == self.arch()
    }

    fn is_correct(&self, sample: &Sample, tokens: &[usize], _spec: &RewardSpec) -> bool {
        tokens.last() == Some(&sample.class)
    }
}
