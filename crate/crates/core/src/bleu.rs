//! Sentence-level BLEU between a candidate and a single reference.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Largest n-gram order accepted by [`BleuConfig`].
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Tokenizer {
    /// Lowercase, then split on Unicode whitespace.
    #[default]
    WhitespaceLower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Smoothing {
    /// A zero precision at any order makes the score zero.
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BleuConfig {
    pub max_n: usize,
    pub tokenizer: Tokenizer,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            tokenizer: Tokenizer::WhitespaceLower,
            smoothing: Smoothing::None,
        }
    }
}

impl BleuConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.max_n == 0 || self.max_n > MAX_ORDER {
            return Err("bleu.max_n must be in 1..=8");
        }
        Ok(())
    }
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> Vec<String> {
    match tokenizer {
        Tokenizer::WhitespaceLower => text.split_whitespace().map(str::to_lowercase).collect(),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches of `candidate` against `reference`, and the number
/// of candidate n-grams.
pub fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len() + 1 - n)
}

/// BLEU in `[0, 1]`. The n-gram order is capped at the candidate length; an
/// empty candidate or reference scores zero.
pub fn bleu(candidate: &str, reference: &str, cfg: &BleuConfig) -> f64 {
    let cand = tokenize(candidate, cfg.tokenizer);
    let refr = tokenize(reference, cfg.tokenizer);
    bleu_tokens(&cand, &refr, cfg)
}

pub fn bleu_tokens(cand: &[String], refr: &[String], cfg: &BleuConfig) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let orders = cfg.max_n.clamp(1, MAX_ORDER).min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (m, total) = clipped_matches(cand, refr, n);
        if m == 0 {
            return 0.0;
        }
        log_sum += libm::log(m as f64 / total as f64);
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c >= r { 1.0 } else { libm::exp(1.0 - r / c) };
    (bp * libm::exp(log_sum / orders as f64)).clamp(0.0, 1.0)
}
