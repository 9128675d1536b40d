//! Prompt templates and knowledge-augmented prompt assembly.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("knowledge base must describe at least one class")]
    EmptyKnowledge,
    #[error("duplicate class `{0}`")]
    DuplicateClass(String),
    #[error("empty class name")]
    EmptyClassName,
    #[error("class `{0}` has empty attribute text")]
    EmptyAttribute(String),
    #[error("classification template needs at least one class")]
    NoClasses,
}

/// Visual attribute text per class, kept in sorted class order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, String>,
}

impl KnowledgeBase {
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            let (k, v): (String, String) = (k.into(), v.into());
            let k = k.trim().to_owned();
            if k.is_empty() {
                return Err(PromptError::EmptyClassName);
            }
            if v.trim().is_empty() {
                return Err(PromptError::EmptyAttribute(k));
            }
            if entries.contains_key(&k) {
                return Err(PromptError::DuplicateClass(k));
            }
            entries.insert(k, v.trim().to_owned());
        }
        if entries.is_empty() {
            return Err(PromptError::EmptyKnowledge);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn attributes(&self, class: &str) -> Option<&str> {
        self.entries.get(class).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TemplateKind {
    Classification,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    /// e.g. "dermoscopy".
    pub modality: String,
    /// Lesion or organ the question is about.
    pub target: String,
    /// Class names listed in the prompt. Knowledge-base classes are merged in.
    #[cfg_attr(feature = "serde", serde(default))]
    pub classes: Vec<String>,
}

pub const BBOX_FORMAT_SENTENCE: &str = "Output the bounding box in the format [x1, y1, x2, y2].";
pub const THINK_INSTRUCTION: &str = "You FIRST think about the reasoning process as an internal monologue and then provide the final answer.";

impl PromptTemplate {
    pub fn classification(modality: &str, target: &str, classes: &[&str]) -> Self {
        Self {
            kind: TemplateKind::Classification,
            modality: modality.to_owned(),
            target: target.to_owned(),
            classes: classes.iter().map(|c| (*c).to_owned()).collect(),
        }
    }

    pub fn detection(target: &str) -> Self {
        Self {
            kind: TemplateKind::Detection,
            modality: String::new(),
            target: target.to_owned(),
            classes: Vec::new(),
        }
    }
}

/// Renders the template. Without a knowledge base only class names are
/// listed; with one, every class becomes a `name: attributes` pair. Classes
/// are sorted, so the output is a pure function of its inputs.
pub fn build_prompt(template: &PromptTemplate, kb: Option<&KnowledgeBase>) -> Result<String, PromptError> {
    match template.kind {
        TemplateKind::Detection => Ok(format!(
            "Analyze the image and provide the bounding box for the {t}. Ensure the bounding box accurately covers it and does not include too much unrelated areas. {BBOX_FORMAT_SENTENCE} Generate your thinking process on how you determined the box. First output the thinking process in <think> </think> tags and then output the final answer in <answer> </answer> tags. Output the final answer in JSON format.",
            t = template.target
        )),
        TemplateKind::Classification => {
            let mut classes: Vec<&str> = template.classes.iter().map(|c| c.trim()).filter(|c| !c.is_empty()).collect();
            if let Some(kb) = kb {
                classes.extend(kb.classes());
            }
            classes.sort_unstable();
            classes.dedup();
            if classes.is_empty() {
                return Err(PromptError::NoClasses);
            }
            let (intro, listing) = match kb {
                None => ("Categories are as follows", classes.join("; ")),
                Some(kb) => {
                    let pairs: Vec<String> = classes
                        .iter()
                        .map(|c| match kb.attributes(c) {
                            Some(a) => format!("{c}: {a}"),
                            None => (*c).to_owned(),
                        })
                        .collect();
                    ("Categories and their typical descriptions are as follows", pairs.join("; "))
                }
            };
            Ok(format!(
                "This is a {m} image of {t}. Please identify the category of the {t} based on the image. {intro}: {listing}. {THINK_INSTRUCTION} The reasoning process MUST BE enclosed within <think> </think> tags. The final answer MUST BE put in \\boxed{{...}}.",
                m = template.modality,
                t = template.target,
            ))
        }
    }
}
