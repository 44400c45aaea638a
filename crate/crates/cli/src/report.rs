//! The analysis report: summary, rare buckets, rare records, optional
//! fingerprints, and a version header kept apart from the data sections.

use rarescope_core::corpus::{Corpus, CorpusSummary};
use rarescope_core::fingerprint::BinaryFingerprint;
use rarescope_core::normalize::NormalizationConfig;
use rarescope_core::stats::{RareBucketSummary, RareRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct VersionStamp {
    pub tool: String,
    pub format: u32,
    pub config: NormalizationConfig,
    pub rare_threshold: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summary: CorpusSummary,
    pub buckets: RareBucketSummary,
    pub rare: Vec<RareRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprints: Option<Vec<BinaryFingerprint>>,
    pub version: VersionStamp,
}

pub fn build(
    corpus: &Corpus,
    threshold: u64,
    rare: Vec<RareRecord>,
    buckets: RareBucketSummary,
    fingerprints: Option<Vec<BinaryFingerprint>>,
) -> AnalysisReport {
    AnalysisReport {
        summary: corpus.summary(),
        buckets,
        rare,
        fingerprints,
        version: VersionStamp {
            tool: env!("CARGO_PKG_VERSION").to_string(),
            format: crate::db::FORMAT_VERSION,
            config: corpus.config.clone(),
            rare_threshold: threshold,
        },
    }
}

pub fn to_json(report: &AnalysisReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

/// One headline line in the style the corpus summary is usually quoted:
/// binaries, functions, unique normalized instructions.
pub fn headline(summary: &CorpusSummary) -> String {
    format!(
        "{} binaries, {} functions, {} instructions, {} unique normalized instructions",
        summary.binaries, summary.functions, summary.instructions, summary.unique_tokens
    )
}
