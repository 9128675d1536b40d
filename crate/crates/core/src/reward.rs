//! Scalar rule-based rewards and their weighted aggregation.
//!
//! Classification and detection totals mix task and format rewards with
//! `lambda`, grading totals with `alpha`/`gamma`; the recitation term
//! `delta * BLEU` is added on top in every mode, so totals can leave `[0, 1]`
//! whenever `delta != 0`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::bleu::{bleu, BleuConfig};
use crate::structured_output::{format_reward, parse_grade, BBox, ParsedOutput, TaskMode};

/// Margin used when clamping the recitation term into the open interval
/// `(-1, 1)`.
pub const RECITE_CLAMP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid reward spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("ground truth does not match task mode {mode:?}: {reason}")]
    ModeMismatch { mode: TaskMode, reason: &'static str },
}

/// Which text the recitation reward compares against the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ReciteTarget {
    #[default]
    ThinkOnly,
    FullOutput,
}

/// Full reward configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RewardSpec {
    pub mode: TaskMode,
    /// Task-vs-format weight for classification and detection.
    pub lambda: f64,
    /// Task weight for grading.
    pub alpha: f64,
    /// Format weight for grading.
    pub gamma: f64,
    /// Recitation scale; positive rewards copying the prompt, negative
    /// penalizes it.
    pub delta: f64,
    pub iou_threshold: f64,
    /// Grading credit indexed by `|pred - gt|`; distances past the end score 0.
    pub mfrs_weights: Vec<f64>,
    pub recite_target: ReciteTarget,
    pub clamp_recite: bool,
    pub bleu: BleuConfig,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            mode: TaskMode::Classification,
            lambda: 0.9,
            alpha: 0.9,
            gamma: 0.1,
            delta: 0.0,
            iou_threshold: 0.5,
            mfrs_weights: vec![1.0, 0.25, 0.0625],
            recite_target: ReciteTarget::ThinkOnly,
            clamp_recite: false,
            bleu: BleuConfig::default(),
        }
    }
}

impl RewardSpec {
    pub fn classification() -> Self {
        Self::default()
    }

    pub fn detection() -> Self {
        Self {
            mode: TaskMode::Detection,
            ..Self::default()
        }
    }

    pub fn grading() -> Self {
        Self {
            mode: TaskMode::Grading,
            ..Self::default()
        }
    }

    /// Grading with exact-match credit only.
    pub fn grading_exact() -> Self {
        Self {
            mfrs_weights: vec![1.0],
            ..Self::grading()
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        fn bad(field: &'static str, reason: &str) -> Result<(), RewardError> {
            Err(RewardError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        }
        let finite = [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("iou_threshold", self.iou_threshold),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return bad(field, "must be finite");
            }
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda", "must lie in (0, 1)");
        }
        if self.mode == TaskMode::Grading && libm::fabs(self.alpha + self.gamma - 1.0) > 1e-12 {
            return bad("alpha", "alpha + gamma must equal 1 for grading");
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return bad("iou_threshold", "must lie in (0, 1)");
        }
        match self.mfrs_weights.first() {
            Some(&w) if w == 1.0 => {}
            Some(_) => return bad("mfrs_weights", "first weight must be 1.0"),
            None => return bad("mfrs_weights", "must not be empty"),
        }
        if self.mfrs_weights.iter().any(|w| !w.is_finite()) {
            return bad("mfrs_weights", "must be finite");
        }
        if self.mfrs_weights.windows(2).any(|w| w[1] >= w[0]) {
            return bad("mfrs_weights", "must be strictly decreasing");
        }
        if let Err(reason) = self.bleu.validate() {
            return bad("bleu", reason);
        }
        Ok(())
    }
}

/// Named presets served by the scoring endpoint.
pub fn presets() -> Vec<(&'static str, RewardSpec)> {
    vec![
        ("paper_default", RewardSpec::classification()),
        ("mfrs_default", RewardSpec::grading()),
        ("exact_grading", RewardSpec::grading_exact()),
        ("detection_default", RewardSpec::detection()),
        ("recite_pos", RewardSpec::classification().with_delta(0.2)),
        ("recite_neg", RewardSpec::classification().with_delta(-2.0)),
    ]
}

pub fn preset(name: &str) -> Option<RewardSpec> {
    presets().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GroundTruth {
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub label: Option<String>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub grade: Option<i64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub bbox: Option<BBox>,
}

impl GroundTruth {
    pub fn label(label: impl Into<String>) -> Self {
        Self {
            label: Some(label.into()),
            ..Self::default()
        }
    }

    pub fn grade(grade: i64) -> Self {
        Self {
            grade: Some(grade),
            ..Self::default()
        }
    }

    pub fn bbox(bbox: BBox) -> Self {
        Self {
            bbox: Some(bbox),
            ..Self::default()
        }
    }

    /// Checks that exactly the field demanded by `mode` is present.
    pub fn check(&self, mode: TaskMode) -> Result<(), RewardError> {
        let present = (self.label.is_some(), self.grade.is_some(), self.bbox.is_some());
        let ok = match mode {
            TaskMode::Classification => present == (true, false, false),
            TaskMode::Grading => present == (false, true, false),
            TaskMode::Detection => present == (false, false, true),
        };
        if !ok {
            let reason = match mode {
                TaskMode::Classification => "expected only `label`",
                TaskMode::Grading => "expected only `grade`",
                TaskMode::Detection => "expected only `bbox`",
            };
            return Err(RewardError::ModeMismatch { mode, reason });
        }
        if matches!(self.grade, Some(g) if g < 0) {
            return Err(RewardError::ModeMismatch {
                mode,
                reason: "grade must be non-negative",
            });
        }
        Ok(())
    }
}

/// Audit trail of one scored completion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardBreakdown {
    pub format: f64,
    pub task: f64,
    pub recite: f64,
    pub total: f64,
}

/// Case-insensitive exact label match.
pub fn accuracy_reward(p: &ParsedOutput, gt: &GroundTruth) -> f64 {
    match (p.label(), gt.label.as_deref()) {
        (Some(pred), Some(truth)) if pred.trim().to_lowercase() == truth.trim().to_lowercase() => 1.0,
        _ => 0.0,
    }
}

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// 1.0 when the predicted box overlaps the truth strictly above the threshold.
pub fn detection_reward(p: &ParsedOutput, gt: &GroundTruth, spec: &RewardSpec) -> f64 {
    match (p.bbox(), gt.bbox) {
        (Some(pred), Some(truth)) if iou(&pred, &truth) > spec.iou_threshold => 1.0,
        _ => 0.0,
    }
}

/// Graded partial credit by ordinal distance.
pub fn mfrs_reward(pred_grade: i64, gt_grade: i64, spec: &RewardSpec) -> f64 {
    let distance = pred_grade.abs_diff(gt_grade);
    usize::try_from(distance)
        .ok()
        .and_then(|d| spec.mfrs_weights.get(d).copied())
        .unwrap_or(0.0)
}

/// Text the recitation reward compares against the prompt.
pub fn recite_text<'a>(p: &'a ParsedOutput, spec: &RewardSpec) -> &'a str {
    match spec.recite_target {
        ReciteTarget::ThinkOnly => &p.think_text,
        ReciteTarget::FullOutput => &p.raw,
    }
}

/// `delta * BLEU(target, prompt)`, optionally clamped into `(-1, 1)`.
pub fn recitation_reward(p: &ParsedOutput, prompt: &str, spec: &RewardSpec) -> f64 {
    if spec.delta == 0.0 {
        return 0.0;
    }
    let r = spec.delta * bleu(recite_text(p, spec), prompt, &spec.bleu);
    let r = if spec.clamp_recite {
        r.clamp(-1.0 + RECITE_CLAMP_EPS, 1.0 - RECITE_CLAMP_EPS)
    } else {
        r
    };
    // avoid -0.0 leaking into serialized output
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Task reward for the active mode. Payloads salvaged from malformed
/// completions earn nothing.
pub fn task_reward(p: &ParsedOutput, gt: &GroundTruth, spec: &RewardSpec) -> f64 {
    if !p.format_ok {
        return 0.0;
    }
    match spec.mode {
        TaskMode::Classification => accuracy_reward(p, gt),
        TaskMode::Detection => detection_reward(p, gt, spec),
        TaskMode::Grading => match (p.label().and_then(parse_grade), gt.grade) {
            (Some(pred), Some(truth)) => mfrs_reward(pred, truth, spec),
            _ => 0.0,
        },
    }
}

/// Scores one parsed completion. `p` must have been parsed under `spec.mode`.
pub fn score(
    p: &ParsedOutput,
    gt: &GroundTruth,
    prompt: &str,
    spec: &RewardSpec,
) -> Result<RewardBreakdown, RewardError> {
    spec.validate()?;
    gt.check(spec.mode)?;
    Ok(score_unchecked(p, gt, prompt, spec))
}

/// [`score`] without validation, for hot loops that validated up front.
pub fn score_unchecked(p: &ParsedOutput, gt: &GroundTruth, prompt: &str, spec: &RewardSpec) -> RewardBreakdown {
    let format = format_reward(p);
    let task = task_reward(p, gt, spec);
    let recite = recitation_reward(p, prompt, spec);
    let mixed = match spec.mode {
        TaskMode::Classification | TaskMode::Detection => spec.lambda * task + (1.0 - spec.lambda) * format,
        TaskMode::Grading => spec.alpha * task + spec.gamma * format,
    };
    RewardBreakdown {
        format,
        task,
        recite,
        total: mixed + recite,
    }
}
