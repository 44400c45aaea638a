//! Per-binary birthmarks: the set of corpus-rare tokens a binary contains,
//! compared with Jaccard similarity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::FrequencyTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryFingerprint {
    pub binary_id: String,
    pub threshold: u64,
    /// Tokens that are corpus-rare and present in this binary.
    pub tokens: BTreeSet<String>,
    /// Optional 1/corpus_count weights for the weighted similarity variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("binary `{0}` is not part of the corpus table")]
    BinaryNotInCorpus(String),
}

/// Builds the fingerprint of one binary against the corpus-wide table:
/// tokens the binary contains whose corpus count is below `threshold`.
/// The corpus table must already include this binary's contributions.
pub fn fingerprint(
    binary_id: &str,
    binary_table: &FrequencyTable,
    corpus_table: &FrequencyTable,
    threshold: u64,
    weighted: bool,
) -> Result<BinaryFingerprint, FingerprintError> {
    for (token, &count) in binary_table.counts() {
        if corpus_table.count_of(token) < count {
            return Err(FingerprintError::BinaryNotInCorpus(binary_id.to_string()));
        }
    }
    let tokens: BTreeSet<String> = binary_table
        .counts()
        .keys()
        .filter(|token| corpus_table.count_of(token) < threshold)
        .cloned()
        .collect();
    let weights = weighted.then(|| {
        tokens
            .iter()
            .map(|token| (token.clone(), 1.0 / corpus_table.count_of(token) as f64))
            .collect()
    });
    Ok(BinaryFingerprint {
        binary_id: binary_id.to_string(),
        threshold,
        tokens,
        weights,
    })
}

/// Jaccard index of the two token sets; 1.0 when both are empty (binaries
/// with no rare tokens are indistinguishable under this signature).
pub fn similarity(a: &BinaryFingerprint, b: &BinaryFingerprint) -> f64 {
    if a.tokens.is_empty() && b.tokens.is_empty() {
        return 1.0;
    }
    let intersection = a.tokens.intersection(&b.tokens).count() as f64;
    let union = a.tokens.union(&b.tokens).count() as f64;
    intersection / union
}

/// Weighted Jaccard over 1/corpus_count weights; tokens without a stored
/// weight count as 1.
pub fn weighted_similarity(a: &BinaryFingerprint, b: &BinaryFingerprint) -> f64 {
    if a.tokens.is_empty() && b.tokens.is_empty() {
        return 1.0;
    }
    let weight = |fp: &BinaryFingerprint, token: &str| -> f64 {
        fp.weights
            .as_ref()
            .and_then(|w| w.get(token).copied())
            .unwrap_or(1.0)
    };
    let mut inter = 0.0;
    let mut union = 0.0;
    for token in a.tokens.union(&b.tokens) {
        let w = weight(a, token).max(weight(b, token));
        union += w;
        if a.tokens.contains(token) && b.tokens.contains(token) {
            inter += w;
        }
    }
    inter / union
}

/// Ranks the registry against the query: descending score, ties broken by
/// binary id, truncated to `top_k`.
pub fn match_against(
    query: &BinaryFingerprint,
    registry: &[BinaryFingerprint],
    top_k: usize,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = registry
        .iter()
        .map(|candidate| (candidate.binary_id.clone(), similarity(query, candidate)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(top_k);
    scored
}
