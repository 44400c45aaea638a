//! Corpus manifest: either a bare JSON array of entries, or an object
//! carrying entries plus normalization overrides and the rare threshold.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rarescope_core::frontend::{Compiler, MetaHints, OptLevel};
use rarescope_core::normalize::NormalizationConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub binary_id: Option<String>,
    #[serde(default)]
    pub compiler: Option<Compiler>,
    #[serde(default)]
    pub opt_level: Option<OptLevel>,
}

#[derive(Debug, Deserialize)]
struct ManifestDoc {
    entries: Vec<ManifestEntry>,
    #[serde(default)]
    normalization: Option<NormalizationConfig>,
    #[serde(default)]
    rare_threshold: Option<u64>,
    #[serde(default)]
    track_occurrences: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Entries(Vec<ManifestEntry>),
    Doc(ManifestDoc),
}

#[derive(Debug)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub normalization: NormalizationConfig,
    pub rare_threshold: u64,
    pub track_occurrences: bool,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, String> {
        let file: ManifestFile =
            serde_json::from_str(text).map_err(|e| format!("invalid manifest JSON: {e}"))?;
        let (mut entries, normalization, rare_threshold, track_occurrences) = match file {
            ManifestFile::Entries(entries) => (entries, None, None, None),
            ManifestFile::Doc(doc) => (
                doc.entries,
                doc.normalization,
                doc.rare_threshold,
                doc.track_occurrences,
            ),
        };
        if entries.is_empty() {
            return Err("manifest lists no binaries".to_string());
        }
        let rare_threshold = rare_threshold.unwrap_or(5);
        if rare_threshold < 1 {
            return Err("rare_threshold must be at least 1".to_string());
        }
        // Relative paths resolve against the manifest location.
        for entry in &mut entries {
            if entry.path.is_relative() {
                entry.path = base_dir.join(&entry.path);
            }
            if entry.binary_id.is_none() {
                entry.binary_id = entry
                    .path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned());
            }
        }
        let mut seen = BTreeSet::new();
        for entry in &entries {
            let id = entry.binary_id.as_deref().unwrap_or_default();
            if !seen.insert(id.to_string()) {
                return Err(format!("duplicate binary_id `{id}` in manifest"));
            }
        }
        Ok(Manifest {
            entries,
            normalization: normalization.unwrap_or_default(),
            rare_threshold,
            track_occurrences: track_occurrences.unwrap_or(true),
        })
    }

    pub fn scan_entries(&self) -> Vec<rarescope_core::corpus::ScanEntry> {
        self.entries
            .iter()
            .map(|entry| rarescope_core::corpus::ScanEntry {
                path: entry.path.clone(),
                hints: MetaHints {
                    binary_id: entry.binary_id.clone(),
                    compiler: entry.compiler,
                    opt_level: entry.opt_level,
                },
            })
            .collect()
    }
}
