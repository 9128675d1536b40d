//! Localization on a grid of candidate boxes, with class evidence attached
//! to each region so the same contexts double as a classification task.
//!
//! Each context has one informative region. Its descriptor carries a marker
//! along a fixed direction and its evidence row carries the class signal;
//! every other region holds pure noise. The ground-truth box is the
//! informative region's candidate box.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian, EnvError, Environment, Sample};
use crate::policy::{Arch, Head};
use crate::reward::{iou, GroundTruth, RewardSpec};
use crate::structured_output::{render_bbox, render_label, BBox, TaskMode};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DetectionEnvConfig {
    /// Candidates form a `grid x grid` layout.
    pub grid: usize,
    pub cell_px: f64,
    /// IoU between horizontally or vertically adjacent candidates.
    pub distractor_overlap: f64,
    pub region_features: usize,
    pub classes: usize,
    pub marker_strength: f64,
    pub feature_noise: f64,
    pub evidence_signal: f64,
    pub evidence_noise: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for DetectionEnvConfig {
    fn default() -> Self {
        Self {
            grid: 3,
            cell_px: 32.0,
            distractor_overlap: 0.2,
            region_features: 8,
            classes: 4,
            marker_strength: 3.0,
            feature_noise: 1.0,
            evidence_signal: 3.0,
            evidence_noise: 1.0,
            train_samples: 256,
            eval_samples: 1000,
            seed: 0,
        }
    }
}

impl DetectionEnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field, reason| Err(EnvError::InvalidConfig { field, reason });
        if self.grid == 0 {
            return bad("grid", "must be >= 1");
        }
        if !(self.cell_px > 0.0 && self.cell_px.is_finite()) {
            return bad("cell_px", "must be positive");
        }
        if !(self.distractor_overlap >= 0.0 && self.distractor_overlap < 1.0) {
            return bad("distractor_overlap", "must lie in [0, 1)");
        }
        if self.region_features == 0 || self.classes < 2 {
            return bad("classes", "need >= 1 region feature and >= 2 classes");
        }
        for (field, v) in [
            ("marker_strength", self.marker_strength),
            ("feature_noise", self.feature_noise),
            ("evidence_signal", self.evidence_signal),
            ("evidence_noise", self.evidence_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnvError::InvalidConfig {
                    field,
                    reason: "must be finite and >= 0",
                });
            }
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return bad("train_samples", "train and eval sizes must be >= 1");
        }
        Ok(())
    }

    pub fn regions(&self) -> usize {
        self.grid * self.grid
    }

    /// Candidate box of region `r` (row-major). Boxes share a stride of
    /// `cell_px` and are widened so adjacent ones reach the configured IoU.
    pub fn candidate_box(&self, r: usize) -> BBox {
        let s = self.cell_px;
        let d = self.distractor_overlap;
        let w = s * (1.0 + d) / (1.0 - d);
        let (row, col) = ((r / self.grid) as f64, (r % self.grid) as f64);
        BBox::new(col * s, row * s, col * s + w, row * s + w).expect("finite box")
    }
}

pub struct DetectionEnv {
    cfg: DetectionEnvConfig,
    train: Vec<Sample>,
    eval: Vec<Sample>,
    /// Class labels of the train / eval contexts, aligned with the samples.
    train_labels: Vec<usize>,
    eval_labels: Vec<usize>,
    class_names: Vec<String>,
    prompt: String,
}

fn draw(cfg: &DetectionEnvConfig, count: usize, stream: u64, tag: &str) -> (Vec<Sample>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let regions = cfg.regions();
    let stride = cfg.region_features + cfg.classes;
    let mut samples = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let target = rng.random_range(0..regions);
        let label = rng.random_range(0..cfg.classes);
        let mut obs = vec![0.0; regions * stride];
        for r in 0..regions {
            let row = &mut obs[r * stride..(r + 1) * stride];
            for (j, v) in row[..cfg.region_features].iter_mut().enumerate() {
                let marker = if r == target && j == 0 { cfg.marker_strength } else { 0.0 };
                *v = marker + gaussian(&mut rng, cfg.feature_noise);
            }
            for (c, v) in row[cfg.region_features..].iter_mut().enumerate() {
                let signal = if r == target && c == label { cfg.evidence_signal } else { 0.0 };
                *v = signal + gaussian(&mut rng, cfg.evidence_noise);
            }
        }
        samples.push(Sample {
            id: format!("detection-{tag}-{i}"),
            observation: obs,
            truth: GroundTruth::bbox(cfg.candidate_box(target)),
            class: target,
        });
        labels.push(label);
    }
    (samples, labels)
}

impl DetectionEnv {
    /// Train contexts come from their own random stream, so a larger
    /// `train_samples` extends a smaller one; the eval set does not depend
    /// on `train_samples` at all.
    pub fn new(cfg: DetectionEnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let (train, train_labels) = draw(&cfg, cfg.train_samples, 1, "train");
        let (eval, eval_labels) = draw(&cfg, cfg.eval_samples, 2, "eval");
        let class_names = (0..cfg.classes).map(|c| format!("class_{c}")).collect();
        Ok(Self {
            cfg,
            train,
            eval,
            train_labels,
            eval_labels,
            class_names,
            prompt: String::from("Analyze the image and provide the bounding box for the lesion."),
        })
    }

    pub fn config(&self) -> &DetectionEnvConfig {
        &self.cfg
    }

    pub fn arch(&self) -> Arch {
        Arch::SharedBackbone {
            regions: self.cfg.regions(),
            region_features: self.cfg.region_features,
            classes: self.cfg.classes,
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn eval_labels(&self) -> &[usize] {
        &self.eval_labels
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.train_labels
    }

    /// Per-region class evidence rows of an observation.
    pub fn evidence<'a>(&self, observation: &'a [f64], region: usize) -> &'a [f64] {
        let stride = self.cfg.region_features + self.cfg.classes;
        &observation[region * stride + self.cfg.region_features..(region + 1) * stride]
    }
}

impl Environment for DetectionEnv {
    fn name(&self) -> &'static str {
        "detection"
    }

    fn mode(&self) -> TaskMode {
        TaskMode::Detection
    }

    fn head(&self) -> Head {
        Head::Localize
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
        render_bbox("the marked region", &self.cfg.candidate_box(tokens[0]))
    }

    fn supervised_tokens(&self, sample: &Sample) -> Option<Vec<usize>> {
        Some(vec![sample.class])
    }

    fn accepts(&self, arch: &Arch) -> bool {
        *arch == self.arch()
    }

    fn is_correct(&self, sample: &Sample, tokens: &[usize], spec: &RewardSpec) -> bool {
        match (tokens.last(), sample.truth.bbox) {
            (Some(&t), Some(truth)) => iou(&self.cfg.candidate_box(t), &truth) > spec.iou_threshold,
            _ => false,
        }
    }
}

/// The detection contexts relabelled for zero-shot classification through
/// the classify head.
pub struct ZeroShotClassification {
    train: Vec<Sample>,
    eval: Vec<Sample>,
    class_names: Vec<String>,
    arch: Arch,
    prompt: String,
}

impl ZeroShotClassification {
    pub fn new(env: &DetectionEnv) -> Self {
        let relabel = |samples: &[Sample], labels: &[usize]| -> Vec<Sample> {
            samples
                .iter()
                .zip(labels)
                .map(|(s, &y)| Sample {
                    id: s.id.replace("detection", "classification"),
                    observation: s.observation.clone(),
                    truth: GroundTruth::label(env.class_names[y].clone()),
                    class: y,
                })
                .collect()
        };
        Self {
            train: relabel(&env.train, &env.train_labels),
            eval: relabel(&env.eval, &env.eval_labels),
            class_names: env.class_names.clone(),
            arch: env.arch(),
            prompt: String::from("Please identify the category of the lesion based on the image."),
        }
    }
}

impl Environment for ZeroShotClassification {
    fn name(&self) -> &'static str {
        "zero_shot_classification"
    }

    fn mode(&self) -> TaskMode {
        TaskMode::Classification
    }

    fn head(&self) -> Head {
        Head::Classify
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
        render_label("evidence in the attended region", &self.class_names[tokens[0]])
    }

    fn supervised_tokens(&self, sample: &Sample) -> Option<Vec<usize>> {
        Some(vec![sample.class])
    }

    fn accepts(&self, arch: &Arch) -> bool {
        *arch == self.arch
    }

    fn is_correct(&self, sample: &Sample, tokens: &[usize], _spec: &RewardSpec) -> bool {
        tokens.last() == Some(&sample.class)
    }
}
