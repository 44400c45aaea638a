//! Rule-based classification of rare tokens into four categories, with
//! machine-checkable evidence per decision. Rules fire in fixed priority
//! order (ASM > INTRINSIC > FP > STRUCT); rules satisfied after the first
//! hit are kept as secondary evidence, since real tokens routinely satisfy
//! several predicates at once.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenParts;
use crate::frontend::Compiler;
use crate::stats::{FrequencyTable, RareRecord, RareSite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoryLabel {
    HandWrittenAssembly,
    CompilerIntrinsic,
    FloatingPointSupport,
    StructMemberAccess,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleId {
    #[serde(rename = "R-ASM")]
    Asm,
    #[serde(rename = "R-INTRINSIC")]
    Intrinsic,
    #[serde(rename = "R-FP")]
    Fp,
    #[serde(rename = "R-STRUCT")]
    Struct,
}

impl RuleId {
    pub fn label(self) -> CategoryLabel {
        match self {
            RuleId::Asm => CategoryLabel::HandWrittenAssembly,
            RuleId::Intrinsic => CategoryLabel::CompilerIntrinsic,
            RuleId::Fp => CategoryLabel::FloatingPointSupport,
            RuleId::Struct => CategoryLabel::StructMemberAccess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationEvidence {
    pub rule_id: RuleId,
    pub facts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_excerpt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub label: CategoryLabel,
    /// Evidence for the winning rule; absent for Unclassified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<ClassificationEvidence>,
    /// Other rules whose predicates also held.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub secondary: Vec<ClassificationEvidence>,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("mnemonic set file {0}: {1}")]
    SetFile(String, std::io::Error),
}

/// One mnemonic set: exact names plus trailing-`*` prefix patterns, one per
/// line, `#` comments.
#[derive(Debug, Clone, Default)]
pub struct MnemonicSet {
    exact: BTreeSet<String>,
    prefixes: Vec<String>,
}

impl MnemonicSet {
    pub fn parse(text: &str) -> Self {
        let mut set = MnemonicSet::default();
        for line in text.lines() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            match entry.strip_suffix('*') {
                Some(prefix) => set.prefixes.push(prefix.to_string()),
                None => {
                    set.exact.insert(entry.to_string());
                }
            }
        }
        set
    }

    pub fn contains(&self, mnemonic: &str) -> bool {
        self.exact.contains(mnemonic)
            || self.prefixes.iter().any(|p| mnemonic.starts_with(p.as_str()))
    }
}

/// The classifier's mnemonic sets, shipped as versioned data files.
#[derive(Debug, Clone)]
pub struct MnemonicSets {
    pub opmask: MnemonicSet,
    pub bmi: MnemonicSet,
    pub fp_compare_convert: MnemonicSet,
    pub evex_vector: MnemonicSet,
    pub prefetch: MnemonicSet,
}

impl Default for MnemonicSets {
    fn default() -> Self {
        MnemonicSets {
            opmask: MnemonicSet::parse(include_str!("../data/sets/opmask.txt")),
            bmi: MnemonicSet::parse(include_str!("../data/sets/bmi.txt")),
            fp_compare_convert: MnemonicSet::parse(include_str!(
                "../data/sets/fp_compare_convert.txt"
            )),
            evex_vector: MnemonicSet::parse(include_str!("../data/sets/evex_vector.txt")),
            prefetch: MnemonicSet::parse(include_str!("../data/sets/prefetch.txt")),
        }
    }
}

impl MnemonicSets {
    /// Loads overrides from a directory holding `opmask.txt`, `bmi.txt`,
    /// `fp_compare_convert.txt`, `evex_vector.txt`, `prefetch.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self, ClassifyError> {
        let read = |name: &str| -> Result<MnemonicSet, ClassifyError> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ClassifyError::SetFile(path.display().to_string(), e))?;
            Ok(MnemonicSet::parse(&text))
        };
        Ok(MnemonicSets {
            opmask: read("opmask.txt")?,
            bmi: read("bmi.txt")?,
            fp_compare_convert: read("fp_compare_convert.txt")?,
            evex_vector: read("evex_vector.txt")?,
            prefetch: read("prefetch.txt")?,
        })
    }
}

/// Per-binary corpus context needed by the rules: which compiler produced
/// each binary, and that binary's token table.
pub struct ClassifyContext<'a> {
    pub sets: &'a MnemonicSets,
    pub binaries: Vec<(Compiler, &'a FrequencyTable)>,
}

impl<'a> ClassifyContext<'a> {
    /// Exact set of compilers whose binaries contain the token, from
    /// occurrence provenance.
    pub fn compiler_exclusivity(&self, token: &str) -> BTreeSet<Compiler> {
        self.binaries
            .iter()
            .filter(|(_, table)| table.contains(token))
            .map(|(compiler, _)| *compiler)
            .collect()
    }

    /// Number of distinct compiler labels present in the corpus at all.
    fn distinct_compilers(&self) -> usize {
        self.binaries
            .iter()
            .map(|(c, _)| *c)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

fn asm_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(^|[^A-Za-z0-9_])(__asm__|asm)(\s+volatile)?\b").unwrap())
}

fn member_access_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // `x.y`, `x->y`, or subscripted member access `x[`; aggregate type
    // references count as well.
    RE.get_or_init(|| {
        Regex::new(
            r"[A-Za-z_][A-Za-z0-9_]*\s*(\.|->)\s*[A-Za-z_]|[A-Za-z_][A-Za-z0-9_]*\s*\[|\b(struct|union|class)\s+[A-Za-z_]",
        )
        .unwrap()
    })
}

/// Classifies one rare record. Rules are evaluated in fixed priority order
/// and the first hit wins; missing source data merely disables R-ASM's
/// excerpt clause and R-STRUCT's source clause.
pub fn classify(
    record: &RareRecord,
    parts: Option<&TokenParts>,
    ctx: &ClassifyContext<'_>,
) -> Classification {
    let mut hits: Vec<ClassificationEvidence> = Vec::new();
    if let Some(ev) = rule_asm(record, ctx) {
        hits.push(ev);
    }
    if let Some(ev) = rule_intrinsic(record, parts, ctx) {
        hits.push(ev);
    }
    if let Some(ev) = rule_fp(parts, ctx) {
        hits.push(ev);
    }
    if let Some(ev) = rule_struct(record, parts) {
        hits.push(ev);
    }
    match hits.split_first() {
        Some((primary, rest)) => Classification {
            label: primary.rule_id.label(),
            evidence: Some(primary.clone()),
            secondary: rest.to_vec(),
        },
        None => Classification {
            label: CategoryLabel::Unclassified,
            evidence: None,
            secondary: Vec::new(),
        },
    }
}

fn rule_asm(record: &RareRecord, ctx: &ClassifyContext<'_>) -> Option<ClassificationEvidence> {
    for site in &record.sites {
        if let Some(excerpt) = &site.source_excerpt {
            if asm_pattern().is_match(excerpt) {
                let mut facts = vec![format!(
                    "source excerpt at {}:{:#x} matches assembly-statement pattern",
                    site.binary_id, site.address
                )];
                if let Some(parts) = record.token.split('_').next() {
                    if ctx.sets.prefetch.contains(parts) {
                        facts.push("mnemonic is a prefetch hint".to_string());
                    }
                }
                return Some(ClassificationEvidence {
                    rule_id: RuleId::Asm,
                    facts,
                    source_excerpt: Some(excerpt.clone()),
                });
            }
        }
        if let Some(location) = &site.location {
            let file = location.file.to_ascii_lowercase();
            if file.ends_with(".s") || file.ends_with(".asm") {
                return Some(ClassificationEvidence {
                    rule_id: RuleId::Asm,
                    facts: vec![format!(
                        "occurrence maps into assembly source file `{}`",
                        location.file
                    )],
                    source_excerpt: site.source_excerpt.clone(),
                });
            }
        }
    }
    None
}

fn rule_intrinsic(
    record: &RareRecord,
    parts: Option<&TokenParts>,
    ctx: &ClassifyContext<'_>,
) -> Option<ClassificationEvidence> {
    let mnemonic = parts.map(|p| p.mnemonic.as_str())?;
    let member = if ctx.sets.opmask.contains(mnemonic) {
        "opmask set"
    } else if ctx.sets.bmi.contains(mnemonic) {
        "bmi set"
    } else if mnemonic.starts_with('v') && ctx.sets.evex_vector.contains(mnemonic) {
        "evex vector set"
    } else {
        return None;
    };
    let mut facts = vec![format!("mnemonic `{mnemonic}` in {member}")];
    if ctx.distinct_compilers() <= 1 {
        // Single-compiler corpus: the exclusivity clause is vacuous and the
        // rule degrades to set membership alone.
        facts.push("single-compiler corpus: exclusivity vacuously satisfied".to_string());
    } else {
        let compilers = ctx.compiler_exclusivity(&record.token);
        if compilers.len() != 1 {
            return None;
        }
        let compiler = compilers.iter().next().unwrap();
        facts.push(format!("token exclusive to {compiler} binaries"));
    }
    Some(ClassificationEvidence {
        rule_id: RuleId::Intrinsic,
        facts,
        source_excerpt: None,
    })
}

fn rule_fp(parts: Option<&TokenParts>, ctx: &ClassifyContext<'_>) -> Option<ClassificationEvidence> {
    let mnemonic = parts.map(|p| p.mnemonic.as_str())?;
    if !ctx.sets.fp_compare_convert.contains(mnemonic) {
        return None;
    }
    Some(ClassificationEvidence {
        rule_id: RuleId::Fp,
        facts: vec![format!(
            "mnemonic `{mnemonic}` in floating-point compare/convert set"
        )],
        source_excerpt: None,
    })
}

fn rule_struct(record: &RareRecord, parts: Option<&TokenParts>) -> Option<ClassificationEvidence> {
    let operand = parts?
        .operand_tokens
        .iter()
        .find(|tok| memory_with_base_and_disp(tok))?;
    let mut facts = vec![format!(
        "operand `{operand}` is a based memory access with nonzero displacement"
    )];
    let excerpts: Vec<&RareSite> = record
        .sites
        .iter()
        .filter(|s| s.source_excerpt.is_some())
        .collect();
    if excerpts.is_empty() {
        facts.push("source clause disabled (no source data)".to_string());
        return Some(ClassificationEvidence {
            rule_id: RuleId::Struct,
            facts,
            source_excerpt: None,
        });
    }
    for site in excerpts {
        let excerpt = site.source_excerpt.as_ref().unwrap();
        if member_access_pattern().is_match(excerpt) {
            facts.push(format!(
                "mapped line at {}:{:#x} matches member-access pattern",
                site.binary_id, site.address
            ));
            return Some(ClassificationEvidence {
                rule_id: RuleId::Struct,
                facts,
                source_excerpt: Some(excerpt.clone()),
            });
        }
    }
    None
}

/// True for normalized memory operand tokens with a base register and a
/// nonzero displacement (`qwordptr[sp8+disp]`, `dwordptr[bp8-8]`, ...).
fn memory_with_base_and_disp(token: &str) -> bool {
    const BASES: &[&str] = &["reg1", "reg2", "reg4", "reg8", "sp4", "sp8", "bp4", "bp8", "ip8"];
    let Some(open) = token.find('[') else {
        return false;
    };
    let Some(inner) = token[open + 1..].strip_suffix(']') else {
        return false;
    };
    let mut has_base = false;
    let mut has_disp = false;
    for part in inner.split(['+', '-']) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if BASES.contains(&part) && !has_base {
            has_base = true;
        } else if part == "disp" || part.parse::<u64>().map(|v| v != 0).unwrap_or(false) {
            has_disp = true;
        }
    }
    has_base && has_disp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Occurrence;

    fn table_with(tokens: &[&str]) -> FrequencyTable {
        FrequencyTable::count(
            tokens.iter().enumerate().map(|(i, t)| {
                (
                    t.to_string(),
                    Occurrence {
                        binary_id: "b".to_string(),
                        function_name: "f".to_string(),
                        address: i as u64,
                    },
                )
            }),
            false,
        )
    }

    fn record(token: &str, excerpt: Option<&str>) -> RareRecord {
        RareRecord {
            token: token.to_string(),
            count: 3,
            sites: vec![RareSite {
                binary_id: "bin-a".to_string(),
                function_name: "f".to_string(),
                address: 0x1000,
                location: None,
                source_excerpt: excerpt.map(str::to_string),
            }],
            category: None,
        }
    }

    fn parts(mnemonic: &str, operands: &[&str]) -> TokenParts {
        TokenParts {
            mnemonic: mnemonic.to_string(),
            operand_tokens: operands.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn set_files_parse_and_stay_disjoint_where_required() {
        let sets = MnemonicSets::default();
        assert!(sets.opmask.contains("kortestw"));
        assert!(sets.opmask.contains("korb"));
        assert!(sets.bmi.contains("blsi"));
        assert!(sets.fp_compare_convert.contains("vcmplesd"));
        assert!(sets.fp_compare_convert.contains("vcmpseq_usss"));
        assert!(!sets.fp_compare_convert.contains("vbroadcastss"));
        assert!(sets.evex_vector.contains("vbroadcastss"));
        assert!(sets.evex_vector.contains("vpmovzxbq"));
        // prefetch and fp sets must never fire together
        for p in ["prefetcht0", "prefetcht1", "prefetcht2", "prefetchnta", "prefetchw"] {
            assert!(sets.prefetch.contains(p));
            assert!(!sets.fp_compare_convert.contains(p));
        }
    }

    #[test]
    fn compiler_exclusivity_is_computed_from_provenance() {
        let sets = MnemonicSets::default();
        let gcc = table_with(&["kortestw_k1_k0", "mov_reg8_reg8"]);
        let clang = table_with(&["mov_reg8_reg8"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc), (Compiler::Clang, &clang)],
        };
        assert_eq!(
            ctx.compiler_exclusivity("kortestw_k1_k0"),
            BTreeSet::from([Compiler::Gcc])
        );
        assert_eq!(
            ctx.compiler_exclusivity("mov_reg8_reg8"),
            BTreeSet::from([Compiler::Gcc, Compiler::Clang])
        );
        assert!(ctx.compiler_exclusivity("absent").is_empty());
    }

    #[test]
    fn golden_kortestw_is_compiler_intrinsic() {
        let sets = MnemonicSets::default();
        let gcc = table_with(&["kortestw_k1_k0"]);
        let clang = table_with(&["mov_reg8_reg8"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc), (Compiler::Clang, &clang)],
        };
        let c = classify(&record("kortestw_k1_k0", None), Some(&parts("kortestw", &["k1", "k0"])), &ctx);
        assert_eq!(c.label, CategoryLabel::CompilerIntrinsic);
        assert_eq!(c.evidence.unwrap().rule_id, RuleId::Intrinsic);
    }

    #[test]
    fn golden_prefetch_with_asm_excerpt_beats_intrinsic() {
        let sets = MnemonicSets::default();
        let gcc = table_with(&["prefetcht0_byteptr[reg8]"]);
        let clang = table_with(&["mov_reg8_reg8"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc), (Compiler::Clang, &clang)],
        };
        let rec = record(
            "prefetcht0_byteptr[reg8]",
            Some("asm volatile(\"prefetcht0 %0\" ::\"m\"(*(uint8_t*)p));"),
        );
        let c = classify(&rec, Some(&parts("prefetcht0", &["byteptr[reg8]"])), &ctx);
        assert_eq!(c.label, CategoryLabel::HandWrittenAssembly);
        assert_eq!(c.evidence.unwrap().rule_id, RuleId::Asm);
    }

    #[test]
    fn golden_vcmplesd_is_floating_point() {
        let sets = MnemonicSets::default();
        // Present in both compilers, so the intrinsic rule cannot fire.
        let gcc = table_with(&["vcmplesd_regxmm_regxmm_qwordptr[sp8+8]"]);
        let clang = table_with(&["vcmplesd_regxmm_regxmm_qwordptr[sp8+8]"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc), (Compiler::Clang, &clang)],
        };
        let c = classify(
            &record("vcmplesd_regxmm_regxmm_qwordptr[sp8+8]", None),
            Some(&parts("vcmplesd", &["regxmm", "regxmm", "qwordptr[sp8+8]"])),
            &ctx,
        );
        assert_eq!(c.label, CategoryLabel::FloatingPointSupport);
        assert_eq!(c.evidence.unwrap().rule_id, RuleId::Fp);
    }

    #[test]
    fn golden_vbroadcastss_struct_line_both_outcomes() {
        let sets = MnemonicSets::default();
        let token = "vbroadcastss_regxmm_dwordptr[sp8+8]";
        let p = parts("vbroadcastss", &["regxmm", "dwordptr[sp8+8]"]);
        let rec = record(token, Some("shadfac[2]/=div;"));

        // gcc-exclusive corpus: intrinsic wins, struct evidence kept.
        let gcc = table_with(&[token]);
        let clang = table_with(&["mov_reg8_reg8"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc), (Compiler::Clang, &clang)],
        };
        let c = classify(&rec, Some(&p), &ctx);
        assert_eq!(c.label, CategoryLabel::CompilerIntrinsic);
        assert!(c.secondary.iter().any(|ev| ev.rule_id == RuleId::Struct));

        // token present under both compilers: exclusivity fails, struct wins.
        let both_gcc = table_with(&[token]);
        let both_clang = table_with(&[token]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &both_gcc), (Compiler::Clang, &both_clang)],
        };
        let c = classify(&rec, Some(&p), &ctx);
        assert_eq!(c.label, CategoryLabel::StructMemberAccess);
        assert_eq!(c.evidence.unwrap().rule_id, RuleId::Struct);
    }

    /// If R-ASM's predicate holds, the label is HandWrittenAssembly no
    /// matter how many other predicates hold. vcmplesd sits in both the
    /// evex and fp sets, so a gcc-exclusive record with an asm+member
    /// excerpt satisfies all four predicates at once.
    #[test]
    fn priority_soundness_asm_dominates_all() {
        let sets = MnemonicSets::default();
        let token = "vcmplesd_regxmm_regxmm_qwordptr[sp8+8]";
        let gcc = table_with(&[token]);
        let clang = table_with(&["mov_reg8_reg8"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc), (Compiler::Clang, &clang)],
        };
        let rec = record(token, Some("asm volatile(\"x\"); s->field[2] = 0;"));
        let c = classify(
            &rec,
            Some(&parts("vcmplesd", &["regxmm", "regxmm", "qwordptr[sp8+8]"])),
            &ctx,
        );
        assert_eq!(c.label, CategoryLabel::HandWrittenAssembly);
        assert_eq!(c.evidence.as_ref().unwrap().rule_id, RuleId::Asm);
        let secondary: Vec<RuleId> = c.secondary.iter().map(|ev| ev.rule_id).collect();
        assert_eq!(secondary, vec![RuleId::Intrinsic, RuleId::Fp, RuleId::Struct]);
    }

    #[test]
    fn unmatched_token_stays_unclassified() {
        let sets = MnemonicSets::default();
        let gcc = table_with(&["mov_reg8_reg8"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc)],
        };
        let c = classify(&record("mov_reg8_reg8", None), Some(&parts("mov", &["reg8", "reg8"])), &ctx);
        assert_eq!(c.label, CategoryLabel::Unclassified);
        assert!(c.evidence.is_none());
    }

    #[test]
    fn single_compiler_corpus_degrades_exclusivity_to_membership() {
        let sets = MnemonicSets::default();
        let only = table_with(&["kaddb_k1_k2_k3"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &only)],
        };
        let c = classify(&record("kaddb_k1_k2_k3", None), Some(&parts("kaddb", &["k1", "k2", "k3"])), &ctx);
        assert_eq!(c.label, CategoryLabel::CompilerIntrinsic);
        let facts = c.evidence.unwrap().facts;
        assert!(facts.iter().any(|f| f.contains("vacuously")));
    }

    #[test]
    fn memory_operand_predicate() {
        assert!(memory_with_base_and_disp("qwordptr[sp8+disp]"));
        assert!(memory_with_base_and_disp("dwordptr[sp8+8]"));
        assert!(memory_with_base_and_disp("dwordptr[bp8-8]"));
        assert!(memory_with_base_and_disp("[reg8+reg8*4+disp]"));
        assert!(!memory_with_base_and_disp("byteptr[reg8]"));
        assert!(!memory_with_base_and_disp("qwordptr[disp]"));
        assert!(!memory_with_base_and_disp("[reg8*2+disp]"));
        assert!(!memory_with_base_and_disp("regxmm"));
        assert!(!memory_with_base_and_disp("immval"));
    }

    #[test]
    fn evidence_completeness_for_non_unclassified() {
        let sets = MnemonicSets::default();
        let gcc = table_with(&["vcvtss2sd_regxmm_regxmm_regxmm"]);
        let ctx = ClassifyContext {
            sets: &sets,
            binaries: vec![(Compiler::Gcc, &gcc)],
        };
        let c = classify(
            &record("vcvtss2sd_regxmm_regxmm_regxmm", None),
            Some(&parts("vcvtss2sd", &["regxmm", "regxmm", "regxmm"])),
            &ctx,
        );
        assert_ne!(c.label, CategoryLabel::Unclassified);
        assert!(!c.evidence.unwrap().facts.is_empty());
    }
}
