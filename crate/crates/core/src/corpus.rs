//! Corpus model: per-binary frequency tables with metadata and a shared
//! token vocabulary, plus the scan pipeline that builds them. Scanning
//! distinct binaries is embarrassingly parallel; results merge in manifest
//! order so output is identical whichever path ran.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::frontend::{
    load_binary, Arch, BinaryMeta, Compiler, FrontendError, FunctionRecord, LoadedBinary,
    MetaHints, OptLevel,
};
use crate::normalize::{normalize_instruction, NormalizationConfig};
use crate::stats::{FrequencyTable, Occurrence, StatsError};

/// Mnemonic and operand tokens behind one vocabulary entry, kept because
/// the joined token cannot be split unambiguously (mnemonics may contain
/// underscores).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenParts {
    pub mnemonic: String,
    pub operand_tokens: Vec<String>,
}

/// token -> parts. On the rare chance two distinct part tuples join into
/// the same token, the lexicographically smallest wins, keeping merges
/// order-independent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(BTreeMap<String, TokenParts>);

impl Vocabulary {
    pub fn observe(&mut self, token: &str, parts: TokenParts) {
        match self.0.get_mut(token) {
            Some(existing) => {
                if parts < *existing {
                    *existing = parts;
                }
            }
            None => {
                self.0.insert(token.to_string(), parts);
            }
        }
    }

    pub fn merge_from(&mut self, other: Vocabulary) {
        for (token, parts) in other.0 {
            self.observe(&token, parts);
        }
    }

    pub fn get(&self, token: &str) -> Option<&TokenParts> {
        self.0.get(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One analyzed binary inside a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryEntry {
    pub meta: BinaryMeta,
    pub functions: u64,
    pub instructions: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    pub table: FrequencyTable,
}

/// The corpus: per-binary tables in manifest order, the shared vocabulary,
/// and the configuration everything was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: NormalizationConfig,
    pub rare_threshold: u64,
    pub tracking: bool,
    pub binaries: Vec<BinaryEntry>,
    pub vocabulary: Vocabulary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub binaries: u64,
    pub functions: u64,
    pub instructions: u64,
    pub unique_tokens: u64,
}

impl Corpus {
    /// Merge of every per-binary table, in corpus order.
    pub fn merged_table(&self) -> Result<FrequencyTable, StatsError> {
        let mut merged = FrequencyTable::new(self.tracking);
        for entry in &self.binaries {
            merged.merge_from(entry.table.clone())?;
        }
        Ok(merged)
    }

    pub fn binary(&self, binary_id: &str) -> Option<&BinaryEntry> {
        self.binaries.iter().find(|b| b.meta.binary_id == binary_id)
    }

    pub fn per_binary_tables(&self) -> Vec<FrequencyTable> {
        self.binaries.iter().map(|b| b.table.clone()).collect()
    }

    /// (compiler, table) pairs for classification context.
    pub fn compiler_tables(&self) -> Vec<(Compiler, &FrequencyTable)> {
        self.binaries
            .iter()
            .map(|b| (b.meta.compiler, &b.table))
            .collect()
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            binaries: self.binaries.len() as u64,
            functions: self.binaries.iter().map(|b| b.functions).sum(),
            instructions: self.binaries.iter().map(|b| b.instructions).sum(),
            unique_tokens: self.vocabulary.len() as u64,
        }
    }
}

/// One manifest entry for the scanner.
#[derive(Debug, Clone)]
pub struct ScanEntry {
    pub path: PathBuf,
    pub hints: MetaHints,
}

#[derive(Debug)]
pub struct ScanFailure {
    pub path: PathBuf,
    pub error: FrontendError,
}

#[derive(Debug)]
pub struct ScanOutcome {
    pub corpus: Corpus,
    pub failures: Vec<ScanFailure>,
}

/// Scans every entry and assembles the corpus; per-binary failures are
/// collected, not fatal. Runs per-binary work in parallel when the
/// `parallel` feature is enabled.
pub fn scan(
    entries: &[ScanEntry],
    config: &NormalizationConfig,
    rare_threshold: u64,
    tracking: bool,
) -> ScanOutcome {
    #[cfg(feature = "parallel")]
    let results: Vec<_> = entries
        .par_iter()
        .map(|entry| scan_one(entry, config, tracking))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = entries
        .iter()
        .map(|entry| scan_one(entry, config, tracking))
        .collect();
    assemble(results, config, rare_threshold, tracking)
}

/// Sequential twin of [`scan`], available in every build for comparison.
pub fn scan_sequential(
    entries: &[ScanEntry],
    config: &NormalizationConfig,
    rare_threshold: u64,
    tracking: bool,
) -> ScanOutcome {
    let results: Vec<_> = entries
        .iter()
        .map(|entry| scan_one(entry, config, tracking))
        .collect();
    assemble(results, config, rare_threshold, tracking)
}

type ScanResult = Result<(BinaryEntry, Vocabulary), ScanFailure>;

fn assemble(
    results: Vec<ScanResult>,
    config: &NormalizationConfig,
    rare_threshold: u64,
    tracking: bool,
) -> ScanOutcome {
    let mut corpus = Corpus {
        config: config.clone(),
        rare_threshold,
        tracking,
        binaries: Vec::new(),
        vocabulary: Vocabulary::default(),
    };
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok((entry, vocab)) => {
                corpus.vocabulary.merge_from(vocab);
                corpus.binaries.push(entry);
            }
            Err(failure) => failures.push(failure),
        }
    }
    ScanOutcome { corpus, failures }
}

fn scan_one(entry: &ScanEntry, config: &NormalizationConfig, tracking: bool) -> ScanResult {
    let loaded = load_any(entry).map_err(|error| ScanFailure {
        path: entry.path.clone(),
        error,
    })?;
    Ok(tally_binary(loaded, config, tracking))
}

/// ELF by magic, textual disassembly otherwise, so the pipeline runs even
/// without a byte decoder in play.
fn load_any(entry: &ScanEntry) -> Result<LoadedBinary, FrontendError> {
    let head = {
        let mut buf = [0u8; 4];
        use std::io::Read;
        let mut file = std::fs::File::open(&entry.path)?;
        let n = file.read(&mut buf)?;
        buf[..n].to_vec()
    };
    if head == [0x7f, b'E', b'L', b'F'] {
        return load_binary(&entry.path, &entry.hints);
    }
    let text = std::fs::read_to_string(&entry.path)?;
    let functions = crate::frontend::textual::parse_textual_disassembly(&text)?;
    let binary_id = entry
        .hints
        .binary_id
        .clone()
        .or_else(|| entry.path.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| entry.path.display().to_string());
    Ok(LoadedBinary {
        meta: BinaryMeta {
            binary_id,
            path: entry.path.clone(),
            compiler: entry.hints.compiler.unwrap_or(Compiler::Unknown),
            opt_level: entry.hints.opt_level.unwrap_or(OptLevel::Unknown),
            has_debug_info: false,
            arch: Arch::X86_64,
        },
        functions,
        diagnostics: Vec::new(),
    })
}

/// Normalizes and counts one loaded binary.
pub fn tally_binary(
    loaded: LoadedBinary,
    config: &NormalizationConfig,
    tracking: bool,
) -> (BinaryEntry, Vocabulary) {
    let LoadedBinary {
        meta,
        functions,
        mut diagnostics,
    } = loaded;
    let mut table = FrequencyTable::new(tracking);
    let mut vocabulary = Vocabulary::default();
    let mut instructions = 0u64;
    for function in &functions {
        instructions += tally_function(
            &meta.binary_id,
            function,
            config,
            &mut table,
            &mut vocabulary,
            &mut diagnostics,
        );
    }
    let entry = BinaryEntry {
        functions: functions.len() as u64,
        instructions,
        meta,
        diagnostics,
        table,
    };
    (entry, vocabulary)
}

fn tally_function(
    binary_id: &str,
    function: &FunctionRecord,
    config: &NormalizationConfig,
    table: &mut FrequencyTable,
    vocabulary: &mut Vocabulary,
    diagnostics: &mut Vec<String>,
) -> u64 {
    let mut counted = 0u64;
    for instruction in &function.instructions {
        match normalize_instruction(instruction, config) {
            Ok(normalized) => {
                vocabulary.observe(
                    &normalized.token,
                    TokenParts {
                        mnemonic: normalized.mnemonic,
                        operand_tokens: normalized.operand_tokens,
                    },
                );
                table.add(
                    normalized.token,
                    Occurrence {
                        binary_id: binary_id.to_string(),
                        function_name: function.name.clone(),
                        address: instruction.address,
                    },
                );
                counted += 1;
            }
            Err(err) => diagnostics.push(format!(
                "{}: {:#x}: {err}; instruction skipped",
                function.name, instruction.address
            )),
        }
    }
    counted
}
