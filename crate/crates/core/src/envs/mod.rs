//! Synthetic environments for the three task families plus the attribute
//! classification task used for prompt-augmentation runs.
//!
//! Every environment is a pure function of its config and seed.

use alloc::string::String;
use alloc::vec::Vec;

use crate::policy::{Arch, Head};
use crate::reward::{GroundTruth, RewardSpec};
use crate::structured_output::{parse_completion, TaskMode};

mod attribute;
mod detection;
mod few_shot;
mod ordinal;
mod recitation;

pub use attribute::{AttributeEnv, AttributeEnvConfig};
pub use detection::{DetectionEnv, DetectionEnvConfig, ZeroShotClassification};
pub use few_shot::{few_shot_split, FewShotSampler, LabeledDataset, ALLOWED_SHOTS};
pub use ordinal::{degenerate_group_fraction, sparse_reward_probe, OrdinalEnv, OrdinalEnvConfig, RewardKind};
pub use recitation::{RecitationEnv, RecitationEnvConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: &'static str },
    #[error("grade {grade} outside [0, {num_grades})")]
    GradeOutOfRange { grade: usize, num_grades: usize },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("shots_per_class must be one of 10, 20, 256; got {0}")]
    BadShots(usize),
    #[error("sample `{0}` appears in both pool and test set")]
    Overlap(String),
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub observation: Vec<f64>,
    pub truth: GroundTruth,
    /// Class / grade / region index used for splitting and accuracy.
    pub class: usize,
}

/// What a trainer needs from a task.
pub trait Environment {
    fn name(&self) -> &'static str;
    fn mode(&self) -> TaskMode;
    fn head(&self) -> Head {
        Head::Answer
    }
    fn train_samples(&self) -> &[Sample];
    fn eval_samples(&self) -> &[Sample];
    /// Reference text for the recitation reward.
    fn prompt(&self, sample: &Sample) -> &str;
    /// Decodes policy tokens into completion text.
    fn render(&self, sample: &Sample, tokens: &[usize]) -> String;
    /// Tokens of the ground-truth completion, when the task has one.
    fn supervised_tokens(&self, sample: &Sample) -> Option<Vec<usize>>;
    /// Whether a policy architecture fits this task's observation and
    /// vocabulary sizes.
    fn accepts(&self, arch: &Arch) -> bool;
    /// Whether the completion `tokens` renders to a strictly correct answer.
    /// Environments override this with a shortcut that must agree with the
    /// render and parse path.
    fn is_correct(&self, sample: &Sample, tokens: &[usize], spec: &RewardSpec) -> bool {
        let p = parse_completion(&self.render(sample, tokens), self.mode());
        crate::train::is_correct(&p, &sample.truth, spec)
    }
}

pub(crate) fn gaussian<R: rand::Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}
