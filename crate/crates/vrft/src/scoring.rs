//! Wire types shared by `vrft score` and the HTTP service, plus the offline
//! JSONL scorer.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use vrft_core::reward::{presets, score, GroundTruth, RewardBreakdown, RewardError, RewardSpec};
use vrft_core::structured_output::{parse_completion, TaskMode};

/// Largest batch the service accepts.
pub const MAX_ITEMS: usize = 4096;

/// One rollout to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreItem {
    pub id: String,
    pub prompt: String,
    pub completion: String,
    pub ground_truth: GroundTruth,
    pub task: TaskMode,
}

/// A failure pinned to a location in the input document.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl ToString) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Keeps the path recorded by `serde_path_to_error`, rooted at `prefix`.
    pub fn from_serde(prefix: &str, e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (_, ".") => prefix.to_owned(),
            (true, _) => inner,
            (false, p) if p.starts_with('[') => format!("{prefix}{p}"),
            (false, p) => format!("{prefix}.{p}"),
        };
        Self::new(if path.is_empty() { ".".into() } else { path }, e.into_inner())
    }
}

/// Deserializes `T` from JSON text, reporting the failing field path.
pub fn from_json_str<'a, T: Deserialize<'a>>(text: &'a str, prefix: &str) -> Result<T, FieldError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut *de).map_err(|e| FieldError::from_serde(prefix, e))?;
    de.end().map_err(|e| FieldError::new(prefix_or_root(prefix), e))?;
    Ok(value)
}

pub fn from_json_value<T: serde::de::DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, FieldError> {
    serde_path_to_error::deserialize(value).map_err(|e| FieldError::from_serde(prefix, e))
}

fn prefix_or_root(prefix: &str) -> String {
    if prefix.is_empty() {
        ".".into()
    } else {
        prefix.into()
    }
}

/// Formats a double like C's `%.17g`, which always round-trips.
pub fn format_g17(v: f64) -> String {
    if !v.is_finite() {
        return "null".into();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_owned()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn raw(v: f64) -> Box<RawValue> {
    RawValue::from_string(format_g17(v)).expect("formatted double is valid JSON")
}

/// Response row; doubles are emitted with 17 significant digits.
#[derive(Debug, Serialize)]
pub struct WireScore<'a> {
    pub id: &'a str,
    pub format_reward: Box<RawValue>,
    pub task_reward: Box<RawValue>,
    pub recite_reward: Box<RawValue>,
    pub total: Box<RawValue>,
}

impl<'a> WireScore<'a> {
    pub fn new(id: &'a str, b: &RewardBreakdown) -> Self {
        Self {
            id,
            format_reward: raw(b.format),
            task_reward: raw(b.task),
            recite_reward: raw(b.recite),
            total: raw(b.total),
        }
    }
}

/// Why an item could not be scored under a given spec.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ItemError {
    #[error("item task {item:?} does not match spec mode {spec:?}")]
    TaskMismatch { item: TaskMode, spec: TaskMode },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

impl ItemError {
    /// Field the error refers to, relative to the item.
    pub fn field(&self) -> &'static str {
        match self {
            ItemError::TaskMismatch { .. } => "task",
            ItemError::Reward(_) => "ground_truth",
        }
    }
}

/// Scores one item exactly as the library does.
pub fn score_item(item: &ScoreItem, spec: &RewardSpec) -> Result<RewardBreakdown, ItemError> {
    if item.task != spec.mode {
        return Err(ItemError::TaskMismatch {
            item: item.task,
            spec: spec.mode,
        });
    }
    let parsed = parse_completion(&item.completion, spec.mode);
    Ok(score(&parsed, &item.ground_truth, &item.prompt, spec)?)
}

/// Named specs: the built-in presets, optionally extended or overridden
/// from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct Presets(BTreeMap<String, RewardSpec>);

impl Default for Presets {
    fn default() -> Self {
        Self(presets().into_iter().map(|(n, s)| (n.to_owned(), s)).collect())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PresetsError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl Presets {
    /// Adds every spec of a JSON object `{name: spec}` file.
    pub fn with_file(mut self, path: &Path) -> Result<Self, PresetsError> {
        let text = std::fs::read_to_string(path).map_err(|source| PresetsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let extra: BTreeMap<String, RewardSpec> = from_json_str(&text, "")?;
        for (name, spec) in extra {
            spec.validate().map_err(|e| FieldError::new(name.clone(), e))?;
            self.0.insert(name, spec);
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&RewardSpec> {
        self.0.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Interprets a JSON `spec` field: a preset name or an inline spec.
    pub fn resolve(&self, spec: serde_json::Value, path: &str) -> Result<RewardSpec, SpecError> {
        let spec = match spec {
            serde_json::Value::String(name) => self
                .get(&name)
                .cloned()
                .ok_or_else(|| SpecError::Schema(FieldError::new(path, format!("unknown preset `{name}`"))))?,
            v @ serde_json::Value::Object(_) => from_json_value(v, path).map_err(SpecError::Schema)?,
            _ => {
                return Err(SpecError::Schema(FieldError::new(
                    path,
                    "expected a preset name or a reward spec object",
                )))
            }
        };
        spec.validate().map_err(|e| SpecError::Invalid(FieldError::new(spec_field(path, &e), e)))?;
        Ok(spec)
    }
}

fn spec_field(path: &str, e: &RewardError) -> String {
    match e {
        RewardError::InvalidSpec { field, .. } => format!("{path}.{field}"),
        RewardError::ModeMismatch { .. } => path.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    /// Not a spec at all.
    #[error(transparent)]
    Schema(FieldError),
    /// Well-formed but rejected by validation.
    #[error(transparent)]
    Invalid(FieldError),
}

/// Reads a `--spec` argument: a preset name, or the path of a JSON file
/// holding a preset name or a spec object.
pub fn load_spec(arg: &str, presets: &Presets) -> Result<RewardSpec, FieldError> {
    if let Some(spec) = presets.get(arg) {
        return Ok(spec.clone());
    }
    let text = std::fs::read_to_string(arg)
        .map_err(|e| FieldError::new("spec", format!("`{arg}` is neither a preset nor a readable file: {e}")))?;
    let value: serde_json::Value = from_json_str(&text, "spec")?;
    presets.resolve(value, "spec").map_err(|e| match e {
        SpecError::Schema(f) | SpecError::Invalid(f) => f,
    })
}

#[derive(Debug, Serialize)]
struct LineError<'a> {
    line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    path: &'a str,
    error: String,
}

/// Counts from one `score_file` pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreFileReport {
    pub scored: usize,
    pub failed: usize,
}

/// Scores every JSONL record of `input` into `output`, one output line per
/// non-blank input line and in the same order. Lines that fail produce an
/// error record instead and processing continues.
pub fn score_file<R: BufRead, W: Write>(input: R, spec: &RewardSpec, mut output: W) -> std::io::Result<ScoreFileReport> {
    let mut report = ScoreFileReport::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let out = match from_json_str::<ScoreItem>(&line, "") {
            Err(e) => {
                report.failed += 1;
                serde_json::to_string(&LineError {
                    line: n,
                    id: None,
                    path: &e.path,
                    error: e.message,
                })
            }
            Ok(item) => match score_item(&item, spec) {
                Ok(b) => {
                    report.scored += 1;
                    serde_json::to_string(&WireScore::new(&item.id, &b))
                }
                Err(e) => {
                    report.failed += 1;
                    serde_json::to_string(&LineError {
                        line: n,
                        id: Some(&item.id),
                        path: e.field(),
                        error: e.to_string(),
                    })
                }
            },
        }
        .map_err(std::io::Error::other)?;
        writeln!(output, "{out}")?;
    }
    output.flush()?;
    Ok(report)
}
