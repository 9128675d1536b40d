//! Classification from binary visual attributes. Each class owns a disjoint
//! set of attribute words that tend to be present on its samples.
//!
//! A knowledge base naming those attributes becomes a prior on the policy
//! (`prior_policy`), which is how prompt augmentation acts on a linear
//! policy that cannot read text.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::few_shot::{few_shot_split, FewShotSampler, LabeledDataset};
use super::{EnvError, Environment, Sample};
use crate::policy::{Arch, PolicyParams};
use crate::prompt::{build_prompt, KnowledgeBase, PromptTemplate};
use crate::reward::{GroundTruth, RewardSpec};
use crate::structured_output::{render_label, TaskMode};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AttributeEnvConfig {
    pub classes: usize,
    pub attrs_per_class: usize,
    /// Probability that one of the true class's attributes is present.
    pub p_on: f64,
    /// Probability that any other attribute is present.
    pub p_off: f64,
    pub pool_per_class: usize,
    pub test_per_class: usize,
    pub shots_per_class: usize,
    /// Ratio between the largest and smallest class pool. Pool sizes decay
    /// geometrically with the class index; 1 keeps classes balanced.
    pub imbalance: f64,
    pub seed: u64,
}

impl Default for AttributeEnvConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            attrs_per_class: 3,
            p_on: 0.6,
            p_off: 0.2,
            pool_per_class: 300,
            test_per_class: 100,
            shots_per_class: 10,
            imbalance: 1.0,
            seed: 0,
        }
    }
}

impl AttributeEnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field, reason| Err(EnvError::InvalidConfig { field, reason });
        if self.classes < 2 {
            return bad("classes", "must be >= 2");
        }
        if self.attrs_per_class == 0 {
            return bad("attrs_per_class", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.p_on) {
            return bad("p_on", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.p_off) {
            return bad("p_off", "must lie in [0, 1]");
        }
        if self.pool_per_class == 0 || self.test_per_class == 0 {
            return bad("pool_per_class", "pool and test sizes must be >= 1");
        }
        if !(self.imbalance >= 1.0 && self.imbalance.is_finite()) {
            return bad("imbalance", "must be finite and >= 1");
        }
        FewShotSampler {
            shots_per_class: self.shots_per_class,
            seed: self.seed,
        }
        .validate()
    }

    pub fn features(&self) -> usize {
        self.classes * self.attrs_per_class
    }

    /// Pool size of class `c` after applying `imbalance`.
    pub fn pool_size(&self, c: usize) -> usize {
        let frac = c as f64 / (self.classes - 1) as f64;
        let n = libm::ceil(self.pool_per_class as f64 * libm::pow(self.imbalance, -frac)) as usize;
        n.clamp(1, self.pool_per_class)
    }
}

pub struct AttributeEnv {
    cfg: AttributeEnvConfig,
    class_names: Vec<String>,
    attribute_words: Vec<String>,
    train: Vec<Sample>,
    test: Vec<Sample>,
    prompt: String,
}

fn draw(cfg: &AttributeEnvConfig, names: &[String], per_class: usize, stream: u64, tag: &str) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(per_class * cfg.classes);
    for i in 0..per_class {
        for c in 0..cfg.classes {
            let obs = (0..cfg.features())
                .map(|a| {
                    let p = if a / cfg.attrs_per_class == c { cfg.p_on } else { cfg.p_off };
                    if rng.random_bool(p) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(Sample {
                id: format!("attribute-{tag}-{}", i * cfg.classes + c),
                observation: obs,
                truth: GroundTruth::label(names[c].clone()),
                class: c,
            });
        }
    }
    out
}

impl AttributeEnv {
    /// Builds the env; `kb` only affects the prompt text.
    pub fn new(cfg: AttributeEnvConfig, kb: Option<&KnowledgeBase>) -> Result<Self, EnvError> {
        cfg.validate()?;
        let class_names: Vec<String> = (0..cfg.classes).map(|c| format!("class_{c}")).collect();
        let attribute_words = (0..cfg.features())
            .map(|a| format!("attr_{}_{}", a / cfg.attrs_per_class, a % cfg.attrs_per_class))
            .collect();
        let mut pool = draw(&cfg, &class_names, cfg.pool_per_class, 1, "pool");
        let mut kept = vec![0; cfg.classes];
        pool.retain(|s| {
            kept[s.class] += 1;
            kept[s.class] <= cfg.pool_size(s.class)
        });
        let test = draw(&cfg, &class_names, cfg.test_per_class, 2, "test");
        let dataset = LabeledDataset {
            classes: cfg.classes,
            pool,
            test,
        };
        let sampler = FewShotSampler {
            shots_per_class: cfg.shots_per_class,
            seed: cfg.seed,
        };
        let (train, test) = few_shot_split(&dataset, &sampler)?;
        let names: Vec<&str> = class_names.iter().map(String::as_str).collect();
        let template = PromptTemplate::classification("synthetic", "specimen", &names);
        let prompt = build_prompt(&template, kb).expect("template has classes");
        Ok(Self {
            cfg,
            class_names,
            attribute_words,
            train,
            test,
            prompt,
        })
    }

    pub fn config(&self) -> &AttributeEnvConfig {
        &self.cfg
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn attribute_words(&self) -> &[String] {
        &self.attribute_words
    }

    pub fn arch(&self) -> Arch {
        Arch::SoftmaxBandit {
            actions: self.cfg.classes,
            features: self.cfg.features(),
        }
    }

    /// The knowledge base that describes every class correctly.
    pub fn reference_knowledge(&self) -> KnowledgeBase {
        let a = self.cfg.attrs_per_class;
        KnowledgeBase::from_pairs(self.class_names.iter().enumerate().map(|(c, name)| {
            let words: Vec<&str> = self.attribute_words[c * a..(c + 1) * a].iter().map(String::as_str).collect();
            (name.clone(), words.join(", "))
        }))
        .expect("generated names are unique and non-empty")
    }

    /// Zero policy, plus weight `strength` from every attribute the
    /// knowledge base lists for a class to that class's action. Unknown
    /// class names and attribute words are ignored.
    pub fn prior_policy(&self, kb: Option<&KnowledgeBase>, strength: f64) -> PolicyParams {
        let mut p = PolicyParams::zeros(self.arch());
        let d = self.cfg.features();
        let Some(kb) = kb else {
            return p;
        };
        for (class, text) in kb.iter() {
            let Some(c) = self.class_names.iter().position(|n| n == class) else {
                continue;
            };
            for word in text.split(',').map(str::trim) {
                if let Some(a) = self.attribute_words.iter().position(|w| w == word) {
                    p.theta[c * d + a] = strength;
                }
            }
        }
        p
    }
}

impl Environment for AttributeEnv {
    fn name(&self) -> &'static str {
        "attribute"
    }

    fn mode(&self) -> TaskMode {
        TaskMode::Classification
    }

    fn train_samples(&self) -> &[Sample] {
        &self.train
    }

    fn eval_samples(&self) -> &[Sample] {
        &self.test
    }

    fn prompt(&self, _sample: &Sample) -> &str {
        &self.prompt
    }

    fn render(&self, sample: &Sample, tokens: &[usize]) -> String {
        let present: Vec<&str> = sample
            .observation
            .iter()
            .zip(&self.attribute_words)
            .filter(|(v, _)| **v > 0.5)
            .map(|(_, w)| w.as_str())
            .collect();
        let think = if present.is_empty() {
            String::from("no salient attributes")
        } else {
            present.join(" ")
        };
        render_label(&think, &self.class_names[tokens[0]])
    }

    fn supervised_tokens(&self, sample: &Sample) -> Option<Vec<usize>> {
        Some(alloc::vec![sample.class])
    }

    fn accepts(&self, arch: &Arch) -> bool {
        *arch == self.arch()
    }

    fn is_correct(&self, sample: &Sample, tokens: &[usize], _spec: &RewardSpec) -> bool {
        tokens.last() == Some(&sample.class)
    }
}
