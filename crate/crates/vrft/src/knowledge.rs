//! Knowledge files: a JSON object mapping class name to attribute text.

use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use vrft_core::prompt::{KnowledgeBase, PromptError};

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Invalid { path: String, source: PromptError },
}

/// Collects object entries in file order, keeping duplicates so they can be
/// reported instead of silently overwritten.
struct Pairs(Vec<(String, String)>);

impl<'de> serde::Deserialize<'de> for Pairs {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Pairs;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of class name to attribute text")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Pairs, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(Pairs(out))
            }
        }
        de.deserialize_map(V)
    }
}

/// Parses knowledge text; `origin` names the source in errors. An empty
/// document is an empty knowledge base, which is rejected like `{}`.
pub fn parse_knowledge(text: &str, origin: &str) -> Result<KnowledgeBase, KnowledgeError> {
    let pairs = if text.trim().is_empty() {
        Vec::new()
    } else {
        serde_json::from_str::<Pairs>(text)
            .map_err(|source| KnowledgeError::Parse {
                path: origin.to_owned(),
                source,
            })?
            .0
    };
    KnowledgeBase::from_pairs(pairs).map_err(|source| KnowledgeError::Invalid {
        path: origin.to_owned(),
        source,
    })
}

pub fn load_knowledge(path: &Path) -> Result<KnowledgeBase, KnowledgeError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_knowledge(&text, &shown)
}
