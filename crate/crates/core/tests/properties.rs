//! Property tests for the statistics and normalization invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use rarescope_core::fingerprint::{similarity, BinaryFingerprint};
use rarescope_core::frontend::{RawInstruction, RawOperand, SizePrefix};
use rarescope_core::normalize::{normalize_instruction, NormalizationConfig};
use rarescope_core::stats::{FrequencyTable, Occurrence};

fn occurrence(i: usize) -> Occurrence {
    Occurrence {
        binary_id: format!("b{}", i % 3),
        function_name: "f".to_string(),
        address: i as u64,
    }
}

fn token_stream() -> impl Strategy<Value = Vec<String>> {
    vec("[a-f][a-z]{0,3}", 0..400)
}

proptest! {
    /// Conservation: however the stream is chunked and merged, the total
    /// equals the stream length and per-token counts match.
    #[test]
    fn merge_conserves_totals(tokens in token_stream(), chunk in 1usize..64) {
        let items: Vec<(String, Occurrence)> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), occurrence(i)))
            .collect();
        let whole = FrequencyTable::count(items.clone(), true);
        let mut merged = FrequencyTable::new(true);
        for part in items.chunks(chunk) {
            merged.merge_from(FrequencyTable::count(part.to_vec(), true)).unwrap();
        }
        prop_assert_eq!(merged.total_occurrences(), tokens.len() as u64);
        prop_assert_eq!(merged.counts(), whole.counts());
        for (token, &count) in whole.counts() {
            prop_assert_eq!(merged.occurrences_of(token).len() as u64, count);
        }
    }

    /// Merging is commutative on counts.
    #[test]
    fn merge_commutes_on_counts(a in token_stream(), b in token_stream()) {
        let ta = || FrequencyTable::count(
            a.iter().enumerate().map(|(i, t)| (t.clone(), occurrence(i))), false);
        let tb = || FrequencyTable::count(
            b.iter().enumerate().map(|(i, t)| (t.clone(), occurrence(i + 10_000))), false);
        let ab = ta().merge(tb()).unwrap();
        let ba = tb().merge(ta()).unwrap();
        prop_assert_eq!(ab.counts(), ba.counts());
        prop_assert_eq!(ab.total_occurrences(), ba.total_occurrences());
    }

    /// Rank counts never increase with rank, and head coverage is
    /// non-decreasing in k, hitting exactly 1.0 at k = unique_tokens.
    #[test]
    fn rank_and_coverage_monotonicity(tokens in token_stream()) {
        prop_assume!(!tokens.is_empty());
        let table = FrequencyTable::count(
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), occurrence(i))), false);
        let ranks = table.rank_distribution();
        for pair in ranks.windows(2) {
            prop_assert!(pair[0].count >= pair[1].count);
            prop_assert_eq!(pair[0].rank + 1, pair[1].rank);
        }
        let mut last = 0.0f64;
        for k in 0..=table.unique_tokens() {
            let cov = table.head_coverage(k);
            prop_assert!(cov >= last - 1e-12);
            last = cov;
        }
        prop_assert!((table.head_coverage(table.unique_tokens()) - 1.0).abs() < 1e-12);
    }

    /// Every rare record's count is positive and under the threshold, and
    /// bucket totals equal the record count.
    #[test]
    fn rare_bucket_consistency(tokens in token_stream(), threshold in 1u64..8) {
        let table = FrequencyTable::count(
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), occurrence(i))), true);
        let (records, summary) = table.rare(threshold).unwrap();
        let bucket_total: u64 = summary.buckets.iter().map(|b| b.token_count).sum();
        prop_assert_eq!(bucket_total, records.len() as u64);
        prop_assert_eq!(summary.buckets.len() as u64, threshold - 1);
        for record in &records {
            prop_assert!(record.count > 0 && record.count < threshold);
        }
    }

    /// Jaccard similarity is symmetric and bounded.
    #[test]
    fn similarity_symmetry(a in vec("[a-d]{1,2}", 0..12), b in vec("[a-d]{1,2}", 0..12)) {
        let fa = BinaryFingerprint {
            binary_id: "a".to_string(),
            threshold: 5,
            tokens: a.into_iter().collect(),
            weights: None,
        };
        let fb = BinaryFingerprint {
            binary_id: "b".to_string(),
            threshold: 5,
            tokens: b.into_iter().collect(),
            weights: None,
        };
        let ab = similarity(&fa, &fb);
        prop_assert_eq!(ab, similarity(&fb, &fa));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(similarity(&fa, &fa), 1.0);
    }
}

fn arbitrary_operand() -> impl Strategy<Value = RawOperand> {
    let reg = prop::sample::select(vec![
        "rax", "rbx", "rcx", "rsp", "rbp", "eax", "ebp", "esp", "r9", "r10d", "ax", "al",
        "xmm0", "xmm7", "ymm1", "zmm2", "k1", "k7", "mm3", "st2", "fs",
    ]);
    let size = prop::sample::select(vec![
        SizePrefix::BytePtr,
        SizePrefix::WordPtr,
        SizePrefix::DwordPtr,
        SizePrefix::QwordPtr,
        SizePrefix::None,
    ]);
    prop_oneof![
        reg.clone().prop_map(|name| RawOperand::Register { name: name.to_string() }),
        any::<i32>().prop_map(|v| RawOperand::immediate(v as i64)),
        (size, prop::option::of(reg.clone()), prop::option::of(reg), 0u8..4, any::<i16>())
            .prop_filter_map("memory needs base, index, or disp", |(s, b, x, sc, d)| {
                if b.is_none() && x.is_none() && d == 0 {
                    return None;
                }
                Some(RawOperand::memory(s, b, x, 1 << sc, d as i64))
            }),
        (0u32..0xffff).prop_map(|t| RawOperand::BranchTarget { value: t as i64 }),
    ]
}

fn arbitrary_instruction() -> impl Strategy<Value = RawInstruction> {
    (
        "[a-z]{2,10}",
        vec(arbitrary_operand(), 0..4),
        0u64..0x7fff_ffff,
    )
        .prop_map(|(mnemonic, operands, address)| {
            RawInstruction::new(address, 4, &mnemonic, operands)
        })
}

proptest! {
    /// Normalization is deterministic, produces a well-formed token, and
    /// is a non-injective map (distinct raw forms may share one token, the
    /// vocabulary never grows past the raw-form count).
    #[test]
    fn normalization_is_deterministic_and_reducing(
        instructions in vec(arbitrary_instruction(), 1..60)
    ) {
        let cfg = NormalizationConfig::default();
        let mut raw_forms = std::collections::BTreeSet::new();
        let mut tokens = std::collections::BTreeSet::new();
        for ins in &instructions {
            let a = normalize_instruction(ins, &cfg).unwrap();
            let b = normalize_instruction(ins, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.token.is_empty());
            prop_assert!(!a.token.chars().any(|c| c.is_whitespace() || c.is_uppercase()));
            prop_assert_eq!(&a.mnemonic, &ins.mnemonic);
            raw_forms.insert(format!("{ins:?}"));
            tokens.insert(a.token);
        }
        prop_assert!(tokens.len() <= raw_forms.len());
    }
}
