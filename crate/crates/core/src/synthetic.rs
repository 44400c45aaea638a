//! Seeded synthetic corpora for tests and benchmarks: Zipf-distributed
//! token streams shaped like real normalized-instruction frequencies, with
//! a long tail of rare tokens.

use std::path::PathBuf;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

use crate::corpus::{BinaryEntry, Corpus, TokenParts, Vocabulary};
use crate::frontend::{
    Arch, BinaryMeta, Compiler, FunctionRecord, LoadedBinary, OptLevel, RawInstruction,
    RawOperand, SizePrefix,
};
use crate::normalize::NormalizationConfig;
use crate::stats::{FrequencyTable, Occurrence};

#[derive(Debug, Clone, Copy)]
pub struct ZipfCorpusSpec {
    pub binaries: usize,
    pub instructions_per_binary: usize,
    pub vocabulary: usize,
    pub exponent: f64,
    pub seed: u64,
}

impl Default for ZipfCorpusSpec {
    /// Defaults produce an open-vocabulary corpus: the vocabulary is large
    /// relative to total draws, so new rare tokens keep entering as the
    /// corpus grows and the rare fraction stays consistent across subsets.
    fn default() -> Self {
        ZipfCorpusSpec {
            binaries: 120,
            instructions_per_binary: 2_000,
            vocabulary: 200_000,
            exponent: 1.2,
            seed: 0x5eed,
        }
    }
}

/// One Zipf-distributed token stream with per-binary occurrence
/// provenance.
pub fn zipf_stream(
    binary_id: &str,
    seed: u64,
    len: usize,
    vocabulary: usize,
    exponent: f64,
) -> Vec<(String, Occurrence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Zipf::new(vocabulary as u64, exponent).expect("valid zipf parameters");
    (0..len)
        .map(|i| {
            let rank = dist.sample(&mut rng) as u64;
            (
                format!("tok{rank:06}"),
                Occurrence {
                    binary_id: binary_id.to_string(),
                    function_name: format!("fn{:03}", i / 64),
                    address: 0x1000 + i as u64 * 4,
                },
            )
        })
        .collect()
}

/// Per-binary frequency tables for `spec`; binary i draws from seed+i so
/// the corpus is reproducible but not degenerate.
pub fn zipf_tables(spec: &ZipfCorpusSpec, tracking: bool) -> Vec<FrequencyTable> {
    (0..spec.binaries)
        .map(|i| {
            let stream = zipf_stream(
                &format!("zipf{i:03}"),
                spec.seed.wrapping_add(i as u64),
                spec.instructions_per_binary,
                spec.vocabulary,
                spec.exponent,
            );
            FrequencyTable::count(stream, tracking)
        })
        .collect()
}

/// A full synthetic corpus with alternating compiler labels, usable by
/// every downstream stage.
pub fn zipf_corpus(spec: &ZipfCorpusSpec, tracking: bool) -> Corpus {
    let tables = zipf_tables(spec, tracking);
    let mut vocabulary = Vocabulary::default();
    let binaries = tables
        .into_iter()
        .enumerate()
        .map(|(i, table)| {
            let binary_id = format!("zipf{i:03}");
            for token in table.counts().keys() {
                vocabulary.observe(
                    token,
                    TokenParts {
                        mnemonic: token.clone(),
                        operand_tokens: Vec::new(),
                    },
                );
            }
            BinaryEntry {
                meta: BinaryMeta {
                    binary_id,
                    path: PathBuf::from(format!("synthetic://{i:03}")),
                    compiler: if i % 2 == 0 { Compiler::Gcc } else { Compiler::Clang },
                    opt_level: OptLevel::Unknown,
                    has_debug_info: false,
                    arch: Arch::X86_64,
                },
                functions: 1,
                instructions: table.total_occurrences(),
                diagnostics: Vec::new(),
                table,
            }
        })
        .collect();
    Corpus {
        config: NormalizationConfig::default(),
        rare_threshold: 5,
        tracking,
        binaries,
        vocabulary,
    }
}

/// A decoded-looking binary with a plausible instruction mix, for
/// exercising the normalize/tally pipeline without files on disk.
pub fn raw_binary(binary_id: &str, seed: u64, instructions: usize) -> LoadedBinary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gp64 = ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r12"];
    let gp32 = ["eax", "ebx", "ecx", "edx", "esi", "edi", "r10d"];
    let pick = |names: &[&str], rng: &mut ChaCha8Rng| -> String {
        names[rng.gen_range(0..names.len())].to_string()
    };
    let mut address = 0x401000u64;
    let body: Vec<RawInstruction> = (0..instructions)
        .map(|_| {
            let (mnemonic, operands): (&str, Vec<RawOperand>) = match rng.gen_range(0..12) {
                0 => ("mov", vec![
                    RawOperand::register(&pick(&gp64, &mut rng)),
                    RawOperand::register(&pick(&gp64, &mut rng)),
                ]),
                1 => ("mov", vec![
                    RawOperand::register(&pick(&gp32, &mut rng)),
                    RawOperand::memory(SizePrefix::DwordPtr, Some("rbp"), None, 1, -(rng.gen_range(1..0x200i64))),
                ]),
                2 => ("lea", vec![
                    RawOperand::register(&pick(&gp64, &mut rng)),
                    RawOperand::memory(SizePrefix::None, Some("rip"), None, 1, rng.gen_range(0x100..0x4000)),
                ]),
                3 => ("push", vec![RawOperand::register(&pick(&gp64, &mut rng))]),
                4 => ("pop", vec![RawOperand::register(&pick(&gp64, &mut rng))]),
                5 => ("call", vec![RawOperand::BranchTarget { value: 0x400000 }]),
                6 => ("jz", vec![RawOperand::BranchTarget { value: 0x400000 }]),
                7 => ("add", vec![
                    RawOperand::register(&pick(&gp64, &mut rng)),
                    RawOperand::immediate(rng.gen_range(0..64)),
                ]),
                8 => ("cmp", vec![
                    RawOperand::register(&pick(&gp32, &mut rng)),
                    RawOperand::immediate(rng.gen_range(0..8)),
                ]),
                9 => ("movss", vec![
                    RawOperand::register("xmm0"),
                    RawOperand::memory(SizePrefix::DwordPtr, Some("rsp"), None, 1, rng.gen_range(0..0x40)),
                ]),
                10 => ("nop", vec![]),
                _ => ("ret", vec![]),
            };
            let length = rng.gen_range(1..=5u32);
            let ins = RawInstruction::new(address, length, mnemonic, operands);
            address += u64::from(length);
            ins
        })
        .collect();
    let (start, end) = (0x401000, address);
    LoadedBinary {
        meta: BinaryMeta {
            binary_id: binary_id.to_string(),
            path: PathBuf::from(format!("synthetic://{binary_id}")),
            compiler: Compiler::Unknown,
            opt_level: OptLevel::Unknown,
            has_debug_info: false,
            arch: Arch::X86_64,
        },
        functions: vec![FunctionRecord {
            name: "body".to_string(),
            start,
            end,
            instructions: body,
        }],
        diagnostics: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_binary_normalizes_cleanly() {
        let loaded = raw_binary("bench", 3, 500);
        let (entry, _) = crate::corpus::tally_binary(
            loaded,
            &NormalizationConfig::default(),
            false,
        );
        assert_eq!(entry.instructions, 500);
        assert!(entry.diagnostics.is_empty());
    }

    #[test]
    fn streams_are_deterministic_per_seed() {
        let a = zipf_stream("b", 9, 1_000, 500, 1.2);
        let b = zipf_stream("b", 9, 1_000, 500, 1.2);
        assert_eq!(a, b);
        let c = zipf_stream("b", 10, 1_000, 500, 1.2);
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_has_a_long_tail() {
        let spec = ZipfCorpusSpec {
            binaries: 10,
            instructions_per_binary: 2_000,
            vocabulary: 1_000,
            exponent: 1.2,
            seed: 7,
        };
        let corpus = zipf_corpus(&spec, false);
        let merged = corpus.merged_table().unwrap();
        let fraction = merged.rare_fraction(5);
        assert!(fraction > 0.05, "expected a long tail, got {fraction}");
        assert_eq!(corpus.binaries.len(), 10);
    }
}
