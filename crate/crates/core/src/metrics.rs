//! Instruction text metrics: length in characters and per-character Shannon
//! entropy in bits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::NeumaierSum;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("entropy is undefined for empty text")]
    EmptyText,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextMetrics {
    pub char_length: usize,
    pub entropy_bits: f64,
}

/// Number of Unicode scalar values.
pub fn char_length(text: &str) -> usize {
    text.chars().count()
}

/// Shannon entropy of the character distribution of `text`, in bits per
/// character. Every character counts, whitespace and punctuation included.
pub fn shannon_entropy(text: &str) -> Result<f64, MetricsError> {
    entropy_of(text.chars())
}

/// Same as [`shannon_entropy`] but ignoring whitespace characters.
pub fn shannon_entropy_non_whitespace(text: &str) -> Result<f64, MetricsError> {
    entropy_of(text.chars().filter(|c| !c.is_whitespace()))
}

fn entropy_of(chars: impl Iterator<Item = char>) -> Result<f64, MetricsError> {
    // BTreeMap keeps the summation order fixed, so results are bit-stable.
    let mut counts: BTreeMap<char, u64> = BTreeMap::new();
    let mut total: u64 = 0;
    for c in chars {
        *counts.entry(c).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(MetricsError::EmptyText);
    }
    if counts.len() == 1 {
        return Ok(0.0);
    }
    let n = total as f64;
    let mut acc = NeumaierSum::default();
    for &count in counts.values() {
        let p = count as f64 / n;
        acc.add(-p * p.log2());
    }
    Ok(acc.total().max(0.0))
}

/// Length and entropy of a nonempty text.
pub fn text_metrics(text: &str) -> Result<TextMetrics, MetricsError> {
    Ok(TextMetrics {
        char_length: char_length(text),
        entropy_bits: shannon_entropy(text)?,
    })
}
