//! Parsing of model completions into think text and answer payload.
//!
//! The output grammar:
//!
//! * exactly one `<think>…</think>` pair, and it must precede the answer;
//! * classification / grading: at least one `\boxed{…}` after `</think>`;
//!   the label is the content of the *last* `\boxed{…}`; grading labels must
//!   parse as integers;
//! * detection: exactly one `<answer>…</answer>` after `</think>` whose
//!   content holds a flat array of four numbers, either bare or inside a
//!   JSON object (`{"bbox": [x1, y1, x2, y2]}`).
//!
//! Text before the think block or after the answer construct is tolerated.
//! Tag matching is case-sensitive and whitespace inside tags is trimmed.
//! Parsing is total: malformed input gives `format_ok == false` with
//! whatever payload could be recovered.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const BOXED_OPEN: &str = "\\boxed{";

/// Longest inner text of a bracket pair we try to read as a 4-number array.
const MAX_ARRAY_INNER: usize = 512;

/// Which answer grammar applies to a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TaskMode {
    Classification,
    Detection,
    Grading,
}

impl TaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Classification => "classification",
            TaskMode::Detection => "detection",
            TaskMode::Grading => "grading",
        }
    }
}

impl core::str::FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classification" => Ok(TaskMode::Classification),
            "detection" => Ok(TaskMode::Detection),
            "grading" => Ok(TaskMode::Grading),
            other => Err(format!("unknown task mode `{other}`")),
        }
    }
}

/// Axis-aligned box in pixel coordinates, always stored with `x1 <= x2` and
/// `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box from two corners in any order. Returns `None` when a
    /// coordinate is not finite.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return None;
        }
        Some(Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Array([f64; 4]),
            Fields { x1: f64, y1: f64, x2: f64, y2: f64 },
        }
        let [x1, y1, x2, y2] = match Repr::deserialize(de)? {
            Repr::Array(a) => a,
            Repr::Fields { x1, y1, x2, y2 } => [x1, y1, x2, y2],
        };
        BBox::new(x1, y1, x2, y2)
            .ok_or_else(|| serde::de::Error::custom("bbox coordinates must be finite"))
    }
}

/// Extracted answer payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Label(String),
    BBox(BBox),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    Label,
    BBox,
    None,
}

/// A completion decomposed into think segment and answer payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub think_text: String,
    pub answer: Answer,
    pub format_ok: bool,
    pub raw: String,
}

impl ParsedOutput {
    pub fn answer_kind(&self) -> AnswerKind {
        match self.answer {
            Answer::Label(_) => AnswerKind::Label,
            Answer::BBox(_) => AnswerKind::BBox,
            Answer::None => AnswerKind::None,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match &self.answer {
            Answer::Label(l) => Some(l),
            _ => None,
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        match self.answer {
            Answer::BBox(b) => Some(b),
            _ => None,
        }
    }
}

/// Span of the think block: byte offsets of the inner text and the end of
/// the closing tag.
struct ThinkSpan {
    inner_start: usize,
    inner_end: usize,
    close_end: usize,
}

/// Parses `raw` under the grammar of `mode`. Never fails.
pub fn parse_completion(raw: &str, mode: TaskMode) -> ParsedOutput {
    let opens: Vec<usize> = raw.match_indices(THINK_OPEN).map(|(i, _)| i).collect();
    let closes: Vec<usize> = raw.match_indices(THINK_CLOSE).map(|(i, _)| i).collect();

    // Best effort: first opening tag and the first closing tag after it.
    let span = opens.first().and_then(|&o| {
        let inner_start = o + THINK_OPEN.len();
        closes.iter().find(|&&c| c >= inner_start).map(|&c| ThinkSpan {
            inner_start,
            inner_end: c,
            close_end: c + THINK_CLOSE.len(),
        })
    });
    let think_ok = opens.len() == 1 && closes.len() == 1 && span.is_some();
    let think_text = span
        .as_ref()
        .map(|s| raw[s.inner_start..s.inner_end].trim().to_string())
        .unwrap_or_default();
    let think_end = span.as_ref().map(|s| s.close_end);

    let (answer, payload_ok) = match mode {
        TaskMode::Classification | TaskMode::Grading => {
            let boxes = boxed_spans(raw);
            let after_think = match think_end {
                Some(end) => boxes.iter().any(|b| b.0 >= end),
                None => false,
            };
            match boxes.last() {
                Some(&(_, start, end)) => {
                    let label = raw[start..end].trim().to_string();
                    let parses = mode != TaskMode::Grading || parse_grade(&label).is_some();
                    (Answer::Label(label), after_think && parses)
                }
                None => (Answer::None, false),
            }
        }
        TaskMode::Detection => {
            let aopens: Vec<usize> = raw.match_indices(ANSWER_OPEN).map(|(i, _)| i).collect();
            let acloses: Vec<usize> = raw.match_indices(ANSWER_CLOSE).map(|(i, _)| i).collect();
            let aspan = aopens.first().and_then(|&o| {
                let s = o + ANSWER_OPEN.len();
                acloses.iter().find(|&&c| c >= s).map(|&c| (o, s, c))
            });
            let search = match aspan {
                Some((_, s, e)) => &raw[s..e],
                None => raw,
            };
            let bbox = first_box_array(search);
            let tags_ok = aopens.len() == 1
                && acloses.len() == 1
                && matches!((aspan, think_end), (Some((o, _, _)), Some(te)) if o >= te);
            match bbox {
                Some(b) => (Answer::BBox(b), tags_ok),
                None => (Answer::None, false),
            }
        }
    };

    ParsedOutput {
        think_text,
        answer,
        format_ok: think_ok && payload_ok,
        raw: raw.to_string(),
    }
}

/// 1.0 when the completion follows the output grammar, 0.0 otherwise.
pub fn format_reward(p: &ParsedOutput) -> f64 {
    if p.format_ok {
        1.0
    } else {
        0.0
    }
}

/// Integer grade parse used by the grading grammar.
pub fn parse_grade(label: &str) -> Option<i64> {
    label.trim().parse::<i64>().ok()
}

/// Canonical classification / grading completion.
pub fn render_label(think: &str, label: &str) -> String {
    format!("{THINK_OPEN}{think}{THINK_CLOSE}{BOXED_OPEN}{label}}}")
}

/// Canonical detection completion with a JSON answer object.
pub fn render_bbox(think: &str, b: &BBox) -> String {
    format!(
        "{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{{\"bbox\": [{}, {}, {}, {}]}}{ANSWER_CLOSE}",
        b.x1, b.y1, b.x2, b.y2
    )
}

/// `(macro start, content start, content end)` for every `\boxed{…}` with a
/// balanced closing brace, in order of appearance. Linear in `raw.len()`.
fn boxed_spans(raw: &str) -> Vec<(usize, usize, usize)> {
    let bytes = raw.as_bytes();
    let mut matching = vec![usize::MAX; bytes.len()];
    let mut stack = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'{' => stack.push(i),
            b'}' => {
                if let Some(o) = stack.pop() {
                    matching[o] = i;
                }
            }
            _ => {}
        }
    }
    raw.match_indices(BOXED_OPEN)
        .filter_map(|(i, _)| {
            let brace = i + BOXED_OPEN.len() - 1;
            let close = matching[brace];
            (close != usize::MAX).then_some((i, brace + 1, close))
        })
        .collect()
}

/// First flat `[a, b, c, d]` array of finite numbers in `s`.
fn first_box_array(s: &str) -> Option<BBox> {
    let bytes = s.as_bytes();
    let mut next_close = None;
    let mut next_open = None;
    // Walk right to left so each '[' knows the nearest following brackets.
    let mut candidates = Vec::new();
    for i in (0..bytes.len()).rev() {
        match bytes[i] {
            b']' => next_close = Some(i),
            b'[' => {
                if let Some(c) = next_close {
                    let nested = matches!(next_open, Some(o) if o < c);
                    if !nested && c - i - 1 <= MAX_ARRAY_INNER {
                        candidates.push((i, c));
                    }
                }
                next_open = Some(i);
            }
            _ => {}
        }
    }
    candidates.iter().rev().find_map(|&(o, c)| {
        let mut parts = s[o + 1..c].split(',');
        let mut vals = [0.0f64; 4];
        for v in vals.iter_mut() {
            *v = parts.next()?.trim().parse::<f64>().ok()?;
        }
        if parts.next().is_some() {
            return None;
        }
        BBox::new(vals[0], vals[1], vals[2], vals[3])
    })
}
