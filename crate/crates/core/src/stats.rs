//! Frequency tables over normalized tokens: counting, merging, rank
//! distributions, head coverage, rare-token extraction with per-frequency
//! buckets, and cumulative subset series.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source_map::SourceLocation;

/// One counted instruction site. `(binary_id, address)` is unique within a
/// corpus: every address is counted exactly once.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    pub binary_id: String,
    pub function_name: String,
    pub address: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("cannot merge tables with different occurrence-tracking modes")]
    MixedTrackingMode,
    #[error("operation requires occurrence tracking, which is disabled for this table")]
    TrackingRequired,
    #[error("subset series requires a non-empty corpus")]
    EmptyCorpus,
    #[error("subset count must be at least 1")]
    InvalidSubsetCount,
}

/// Mergeable multiset of normalized tokens. Occurrence tracking is
/// all-or-nothing per table; disabling it bounds memory on large corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
    occurrences: BTreeMap<String, Vec<Occurrence>>,
    tracking: bool,
    total_occurrences: u64,
}

impl FrequencyTable {
    pub fn new(tracking: bool) -> Self {
        FrequencyTable {
            counts: BTreeMap::new(),
            occurrences: BTreeMap::new(),
            tracking,
            total_occurrences: 0,
        }
    }

    /// Tallies a stream of token/occurrence pairs.
    pub fn count<I, S>(stream: I, tracking: bool) -> Self
    where
        I: IntoIterator<Item = (S, Occurrence)>,
        S: Into<String>,
    {
        let mut table = FrequencyTable::new(tracking);
        for (token, occurrence) in stream {
            table.add(token.into(), occurrence);
        }
        table
    }

    pub fn add(&mut self, token: String, occurrence: Occurrence) {
        *self.counts.entry(token.clone()).or_insert(0) += 1;
        if self.tracking {
            self.occurrences.entry(token).or_default().push(occurrence);
        }
        self.total_occurrences += 1;
    }

    /// Pointwise sum; associative and commutative up to occurrence-list
    /// order.
    pub fn merge(mut self, other: FrequencyTable) -> Result<FrequencyTable, StatsError> {
        self.merge_from(other)?;
        Ok(self)
    }

    pub fn merge_from(&mut self, other: FrequencyTable) -> Result<(), StatsError> {
        if self.tracking != other.tracking {
            return Err(StatsError::MixedTrackingMode);
        }
        for (token, count) in other.counts {
            *self.counts.entry(token).or_insert(0) += count;
        }
        for (token, mut occs) in other.occurrences {
            self.occurrences.entry(token).or_default().append(&mut occs);
        }
        self.total_occurrences += other.total_occurrences;
        Ok(())
    }

    pub fn tracking(&self) -> bool {
        self.tracking
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn count_of(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.counts.contains_key(token)
    }

    pub fn occurrences_of(&self, token: &str) -> &[Occurrence] {
        self.occurrences.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_occurrences(&self) -> u64 {
        self.total_occurrences
    }

    pub fn unique_tokens(&self) -> u64 {
        self.counts.len() as u64
    }

    /// All tokens with a positive count, sorted by count descending with
    /// lexicographic tie-break, ranks assigned from 1.
    pub fn rank_distribution(&self) -> Vec<RankEntry> {
        let mut entries: Vec<(&String, u64)> =
            self.counts.iter().map(|(t, &c)| (t, c)).collect();
        // BTreeMap iteration is already token-ascending; a stable sort on
        // the count alone preserves the lexicographic tie-break.
        entries.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
        entries
            .into_iter()
            .enumerate()
            .map(|(idx, (token, count))| RankEntry {
                rank: idx as u64 + 1,
                token: token.clone(),
                count,
            })
            .collect()
    }

    /// Fraction of all occurrences covered by the top-k ranked tokens;
    /// 0 when the table is empty.
    pub fn head_coverage(&self, k: u64) -> f64 {
        if self.total_occurrences == 0 {
            return 0.0;
        }
        let mut counts: Vec<u64> = self.counts.values().copied().collect();
        counts.sort_unstable_by_key(|&c| std::cmp::Reverse(c));
        let covered: u64 = counts.iter().take(k as usize).sum();
        covered as f64 / self.total_occurrences as f64
    }

    /// Tokens with 0 < count < threshold, each carrying its occurrence
    /// sites, plus the per-frequency bucket summary. Requires occurrence
    /// tracking.
    pub fn rare(
        &self,
        threshold: u64,
    ) -> Result<(Vec<RareRecord>, RareBucketSummary), StatsError> {
        if !self.tracking {
            return Err(StatsError::TrackingRequired);
        }
        let records = self.rare_records(threshold);
        let summary = self.rare_buckets(threshold);
        Ok((records, summary))
    }

    fn rare_records(&self, threshold: u64) -> Vec<RareRecord> {
        self.counts
            .iter()
            .filter(|&(_, &count)| count < threshold)
            .map(|(token, &count)| RareRecord {
                token: token.clone(),
                count,
                sites: self
                    .occurrences_of(token)
                    .iter()
                    .map(|occ| RareSite {
                        binary_id: occ.binary_id.clone(),
                        function_name: occ.function_name.clone(),
                        address: occ.address,
                        location: None,
                        source_excerpt: None,
                    })
                    .collect(),
                category: None,
            })
            .collect()
    }

    /// Bucket summary alone; does not need occurrence tracking.
    pub fn rare_buckets(&self, threshold: u64) -> RareBucketSummary {
        let unique = self.unique_tokens();
        let buckets = (1..threshold)
            .map(|frequency| {
                let token_count =
                    self.counts.values().filter(|&&c| c == frequency).count() as u64;
                RareBucket {
                    frequency,
                    token_count,
                    ratio: if unique == 0 {
                        0.0
                    } else {
                        token_count as f64 / unique as f64
                    },
                }
            })
            .collect();
        RareBucketSummary { threshold, buckets }
    }

    /// Fraction of unique tokens whose count is below `threshold`.
    pub fn rare_fraction(&self, threshold: u64) -> f64 {
        let unique = self.unique_tokens();
        if unique == 0 {
            return 0.0;
        }
        let rare = self.counts.values().filter(|&&c| c < threshold).count() as u64;
        rare as f64 / unique as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    /// 1-based.
    pub rank: u64,
    pub token: String,
    pub count: u64,
}

/// Per-frequency bucket: how many tokens appeared exactly `frequency`
/// times, and that count as a fraction of unique tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareBucket {
    pub frequency: u64,
    pub token_count: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareBucketSummary {
    pub threshold: u64,
    pub buckets: Vec<RareBucket>,
}

/// One instruction site of a rare token, optionally enriched with a source
/// location and the text of the mapped line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareSite {
    pub binary_id: String,
    pub function_name: String,
    pub address: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<SourceLocation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_excerpt: Option<String>,
}

/// One rare token with its corpus count, occurrence sites, and (once
/// classified) its category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareRecord {
    pub token: String,
    pub count: u64,
    pub sites: Vec<RareSite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<crate::classify::Classification>,
}

/// One point of the subset-consistency series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetPoint {
    pub subset_size: usize,
    pub ranks: Vec<RankEntry>,
    pub rare_fraction: f64,
}

/// Splits a corpus of per-binary tables into `k` subsets and reports each
/// subset's rank distribution and rare fraction. Subsets are cumulative
/// prefixes in corpus order by default (sizes ceil(n*i/k)); disjoint mode
/// uses the slices between the same cut points.
pub fn subset_series(
    tables: &[FrequencyTable],
    k: usize,
    rare_threshold: u64,
    disjoint: bool,
) -> Result<Vec<SubsetPoint>, StatsError> {
    if tables.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    if k == 0 {
        return Err(StatsError::InvalidSubsetCount);
    }
    let n = tables.len();
    let cut = |i: usize| (n * i).div_ceil(k);
    let mut points = Vec::with_capacity(k);

    if disjoint {
        for i in 1..=k {
            let (lo, hi) = (cut(i - 1), cut(i));
            let mut merged = FrequencyTable::new(false);
            for table in &tables[lo..hi] {
                merge_counts_only(&mut merged, table);
            }
            points.push(SubsetPoint {
                subset_size: hi - lo,
                ranks: merged.rank_distribution(),
                rare_fraction: merged.rare_fraction(rare_threshold),
            });
        }
    } else {
        let mut running = FrequencyTable::new(false);
        let mut consumed = 0usize;
        for i in 1..=k {
            let size = cut(i);
            for table in &tables[consumed..size] {
                merge_counts_only(&mut running, table);
            }
            consumed = size;
            points.push(SubsetPoint {
                subset_size: size,
                ranks: running.rank_distribution(),
                rare_fraction: running.rare_fraction(rare_threshold),
            });
        }
    }
    Ok(points)
}

/// Subset statistics only need counts; skipping occurrence lists keeps the
/// series cheap on tracked corpora.
fn merge_counts_only(dst: &mut FrequencyTable, src: &FrequencyTable) {
    for (token, &count) in src.counts() {
        *dst.counts.entry(token.clone()).or_insert(0) += count;
    }
    dst.total_occurrences += src.total_occurrences;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn occ(binary: &str, addr: u64) -> Occurrence {
        Occurrence {
            binary_id: binary.to_string(),
            function_name: "f".to_string(),
            address: addr,
        }
    }

    fn stream(tokens: &[&str]) -> Vec<(String, Occurrence)> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), occ("b", i as u64)))
            .collect()
    }

    /// Independent tally: sort the token list and run-length encode it.
    fn brute_force_tally(items: &[(String, Occurrence)]) -> Vec<(String, u64)> {
        let mut tokens: Vec<&str> = items.iter().map(|(t, _)| t.as_str()).collect();
        tokens.sort_unstable();
        let mut out: Vec<(String, u64)> = Vec::new();
        for token in tokens {
            match out.last_mut() {
                Some((prev, n)) if prev == token => *n += 1,
                _ => out.push((token.to_string(), 1)),
            }
        }
        out
    }

    fn zipfish_stream(seed: u64, len: usize, vocab: usize) -> Vec<(String, Occurrence)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|i| {
                // Inverse-CDF-ish skew: low indices dominate.
                let u: f64 = rng.gen_range(0.0f64..1.0).max(1e-9);
                let idx = ((vocab as f64).powf(u) - 1.0) as usize;
                (format!("t{:05}", idx.min(vocab - 1)), occ("b", i as u64))
            })
            .collect()
    }

    #[test]
    fn empty_stream_counts_to_zero() {
        let t = FrequencyTable::count(Vec::<(String, Occurrence)>::new(), true);
        assert_eq!(t.total_occurrences(), 0);
        assert_eq!(t.unique_tokens(), 0);
        assert_eq!(t.rank_distribution(), vec![]);
    }

    #[test]
    fn direct_definition_example() {
        let t = FrequencyTable::count(stream(&["a", "b", "a"]), true);
        assert_eq!(t.count_of("a"), 2);
        assert_eq!(t.count_of("b"), 1);
        assert_eq!(t.total_occurrences(), 3);
        assert_eq!(t.unique_tokens(), 2);
        assert_eq!(t.occurrences_of("a").len(), 2);
    }

    #[test]
    fn count_matches_brute_force_on_zipfish_stream() {
        let items = zipfish_stream(7, 10_000, 500);
        let table = FrequencyTable::count(items.clone(), false);
        let oracle = brute_force_tally(&items);
        assert_eq!(table.unique_tokens() as usize, oracle.len());
        for (token, count) in oracle {
            assert_eq!(table.count_of(&token), count, "token {token}");
        }
        assert_eq!(table.total_occurrences(), 10_000);
    }

    #[test]
    fn merge_identity_and_pointwise_sum() {
        let t = FrequencyTable::count(stream(&["a", "b", "a"]), true);
        let merged = t.clone().merge(FrequencyTable::new(true)).unwrap();
        assert_eq!(merged, t);

        let t1 = FrequencyTable::count(stream(&["a", "b"]), false);
        let t2 = FrequencyTable::count(stream(&["a", "c"]), false);
        let m = t1.clone().merge(t2.clone()).unwrap();
        for token in ["a", "b", "c"] {
            assert_eq!(m.count_of(token), t1.count_of(token) + t2.count_of(token));
        }
    }

    #[test]
    fn merge_of_split_tables_equals_count_of_concatenation() {
        let items = zipfish_stream(11, 5_000, 200);
        let whole = FrequencyTable::count(items.clone(), false);
        let mut merged = FrequencyTable::new(false);
        for chunk in items.chunks(499) {
            let part = FrequencyTable::count(chunk.to_vec(), false);
            merged.merge_from(part).unwrap();
        }
        assert_eq!(merged, whole);
    }

    #[test]
    fn merge_rejects_mixed_tracking() {
        let t1 = FrequencyTable::new(true);
        let t2 = FrequencyTable::new(false);
        assert_eq!(t1.merge(t2), Err(StatsError::MixedTrackingMode));
    }

    #[test]
    fn rank_tie_break_is_lexicographic() {
        let t = FrequencyTable::count(
            stream(&["a", "a", "a", "a", "a", "b", "b", "b", "b", "b", "c"]),
            false,
        );
        let ranks = t.rank_distribution();
        let flat: Vec<(u64, &str, u64)> =
            ranks.iter().map(|r| (r.rank, r.token.as_str(), r.count)).collect();
        assert_eq!(flat, vec![(1, "a", 5), (2, "b", 5), (3, "c", 1)]);
    }

    #[test]
    fn rank_counts_match_independent_sort() {
        let items = zipfish_stream(3, 10_000, 300);
        let table = FrequencyTable::count(items.clone(), false);
        let ranks = table.rank_distribution();

        // Oracle: tally independently, sort by (count desc, token asc).
        let mut oracle = brute_force_tally(&items);
        oracle.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        assert_eq!(ranks.len(), oracle.len());
        for (entry, (token, count)) in ranks.iter().zip(oracle.iter()) {
            assert_eq!((&entry.token, entry.count), (token, *count));
        }
        for pair in ranks.windows(2) {
            assert!(pair[0].count >= pair[1].count);
        }
    }

    #[test]
    fn head_coverage_matches_prefix_sum_oracle() {
        let items = zipfish_stream(5, 10_000, 400);
        let table = FrequencyTable::count(items.clone(), false);

        let mut counts: Vec<u64> = brute_force_tally(&items).into_iter().map(|(_, c)| c).collect();
        counts.sort_unstable_by_key(|&c| std::cmp::Reverse(c));
        let total: u64 = counts.iter().sum();
        let mut prefix = 0u64;
        let mut last = 0.0f64;
        for (i, c) in counts.iter().enumerate() {
            prefix += c;
            let expected = prefix as f64 / total as f64;
            let got = table.head_coverage(i as u64 + 1);
            assert!((got - expected).abs() < 1e-12);
            assert!(got >= last, "head coverage must be non-decreasing");
            last = got;
        }
        assert_eq!(table.head_coverage(0), 0.0);
        assert!((table.head_coverage(table.unique_tokens()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn head_coverage_of_empty_table_is_zero() {
        let t = FrequencyTable::new(false);
        assert_eq!(t.head_coverage(10), 0.0);
    }

    #[test]
    fn rare_definition_example() {
        let mut items = stream(&["a"]);
        items.extend((0..7).map(|i| ("b".to_string(), occ("b2", 100 + i))));
        let t = FrequencyTable::count(items, true);
        let (records, summary) = t.rare(5).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].token, "a");
        assert_eq!(records[0].count, 1);
        assert_eq!(records[0].sites.len(), 1);
        assert_eq!(summary.buckets.len(), 4);
        assert_eq!(summary.buckets[0].token_count, 1);
        assert!((summary.buckets[0].ratio - 0.5).abs() < 1e-12);
        for bucket in &summary.buckets[1..] {
            assert_eq!(bucket.token_count, 0);
            assert_eq!(bucket.ratio, 0.0);
        }
    }

    #[test]
    fn rare_requires_tracking() {
        let t = FrequencyTable::count(stream(&["a"]), false);
        assert!(matches!(t.rare(5), Err(StatsError::TrackingRequired)));
    }

    #[test]
    fn rare_buckets_are_consistent_with_records() {
        let items = zipfish_stream(13, 20_000, 2_000);
        let t = FrequencyTable::count(items, true);
        let (records, summary) = t.rare(5).unwrap();
        let bucket_total: u64 = summary.buckets.iter().map(|b| b.token_count).sum();
        assert_eq!(bucket_total, records.len() as u64);
        for r in &records {
            assert!(r.count < 5 && r.count > 0);
            assert_eq!(r.sites.len() as u64, r.count);
        }
    }

    #[test]
    fn subset_sizes_follow_ceiling_formula() {
        let tables: Vec<FrequencyTable> = (0..120)
            .map(|i| FrequencyTable::count(stream(&[if i % 2 == 0 { "x" } else { "y" }]), false))
            .collect();
        let points = subset_series(&tables, 10, 5, false).unwrap();
        let sizes: Vec<usize> = points.iter().map(|p| p.subset_size).collect();
        assert_eq!(sizes, vec![12, 24, 36, 48, 60, 72, 84, 96, 108, 120]);
    }

    #[test]
    fn degenerate_single_subset_equals_full_corpus() {
        let tables: Vec<FrequencyTable> = (0..7)
            .map(|i| FrequencyTable::count(zipfish_stream(i, 500, 100), false))
            .collect();
        let points = subset_series(&tables, 1, 5, false).unwrap();
        let mut full = FrequencyTable::new(false);
        for t in &tables {
            full.merge_from(t.clone()).unwrap();
        }
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].subset_size, 7);
        assert_eq!(points[0].ranks, full.rank_distribution());
        assert!((points[0].rare_fraction - full.rare_fraction(5)).abs() < 1e-12);
    }

    /// Identical binaries force identical per-subset statistics only when
    /// the subsets hold the same multiset of binaries: disjoint chunks of
    /// equal size. Cumulative prefixes scale absolute counts past the
    /// rarity threshold, so equality cannot hold there.
    #[test]
    fn identical_binaries_give_identical_rare_fractions_in_disjoint_mode() {
        let one = FrequencyTable::count(zipfish_stream(42, 1_000, 150), false);
        let tables: Vec<FrequencyTable> = (0..20).map(|_| one.clone()).collect();
        let points = subset_series(&tables, 10, 5, true).unwrap();
        let first = points[0].rare_fraction;
        for p in &points {
            assert_eq!(p.subset_size, 2);
            assert!((p.rare_fraction - first).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_subsets_cover_the_corpus_exactly_once() {
        let tables: Vec<FrequencyTable> = (0..23)
            .map(|i| FrequencyTable::count(zipfish_stream(i, 200, 50), false))
            .collect();
        let points = subset_series(&tables, 4, 5, true).unwrap();
        let covered: usize = points.iter().map(|p| p.subset_size).sum();
        assert_eq!(covered, 23);
        let occurrences: u64 = points
            .iter()
            .map(|p| p.ranks.iter().map(|r| r.count).sum::<u64>())
            .sum();
        assert_eq!(occurrences, 23 * 200);
    }
}
