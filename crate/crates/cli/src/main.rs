mod db;
mod manifest;
mod plot;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rarescope_core::classify::{classify, ClassifyContext, MnemonicSets};
use rarescope_core::corpus::{scan, Corpus};
use rarescope_core::fingerprint::{
    fingerprint, match_against, similarity, weighted_similarity, BinaryFingerprint,
};
use rarescope_core::source_map::{enrich, AddressResolver, DwarfResolver, ExternalResolver};
use rarescope_core::stats::{subset_series, RareRecord, SubsetPoint};

use manifest::Manifest;

/// Environment variable overriding the external addr2line-compatible
/// command used by `--external`.
const ADDR2LINE_ENV: &str = "RARESCOPE_ADDR2LINE";

const EXIT_USAGE: u8 = 1;
const EXIT_TOTAL_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "rarescope",
    version,
    about = "Corpus analyzer for x86-64 binaries: normalized-instruction statistics, rare-token extraction, source mapping, classification, and binary fingerprints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode, normalize, and count every binary in a manifest; write the
    /// corpus database.
    Scan {
        /// Manifest JSON: an array of {path, binary_id?, compiler?,
        /// opt_level?} or an object with entries/normalization/rare_threshold.
        manifest: PathBuf,
        /// Output database path.
        #[arg(long)]
        out: PathBuf,
        /// Drop per-occurrence provenance to bound memory (disables rare
        /// extraction on the resulting database).
        #[arg(long)]
        no_occurrences: bool,
        /// Scan sequentially even when built with parallel support.
        #[arg(long)]
        sequential: bool,
    },
    /// Rank table of normalized tokens by frequency.
    Freq {
        db: PathBuf,
        /// Print only the top K entries.
        #[arg(long)]
        top: Option<usize>,
        /// Write the full table as CSV (rank,token,count).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rare tokens (count < threshold) with per-frequency buckets.
    Rare {
        db: PathBuf,
        #[arg(long)]
        threshold: Option<u64>,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Rare records enriched with source locations via debug info.
    Map {
        db: PathBuf,
        /// Restrict to records occurring in one binary.
        #[arg(long)]
        binary: Option<String>,
        /// Shell out to an addr2line-compatible tool instead of the
        /// in-process resolver (see RARESCOPE_ADDR2LINE).
        #[arg(long)]
        external: bool,
        #[arg(long)]
        threshold: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Classify rare records into the four categories with evidence.
    Classify {
        db: PathBuf,
        /// Directory overriding the built-in mnemonic set files.
        #[arg(long)]
        sets: Option<PathBuf>,
        /// Root for resolving relative source paths when reading excerpts.
        #[arg(long)]
        source_root: Option<PathBuf>,
        #[arg(long)]
        external: bool,
        #[arg(long)]
        threshold: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Cumulative (or disjoint) subset series of rank distributions and
    /// rare fractions.
    Subsets {
        db: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        threshold: Option<u64>,
        /// Disjoint chunks instead of cumulative prefixes.
        #[arg(long)]
        disjoint: bool,
        /// Write the series as CSV
        /// (subset_index,subset_size,rare_fraction,rank,token,count).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-binary rare-token fingerprints, similarity, and matching.
    Fingerprint {
        db: PathBuf,
        /// Print one binary's fingerprint.
        #[arg(long)]
        binary: Option<String>,
        /// Compare two binaries by Jaccard similarity.
        #[arg(long, num_args = 2, value_names = ["ID1", "ID2"])]
        compare: Option<Vec<String>>,
        /// Rank the whole registry against one binary.
        #[arg(long = "match")]
        match_id: Option<String>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        threshold: Option<u64>,
        /// Use 1/corpus_count token weights for scoring.
        #[arg(long)]
        weighted: bool,
        /// Write the full fingerprint registry as JSON.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Render a subsets CSV as a log-scale rank-frequency SVG.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn usage<S: Into<String>>(message: S) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pager closes the pipe.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Scan {
            manifest,
            out,
            no_occurrences,
            sequential,
        } => cmd_scan(&manifest, &out, !no_occurrences, sequential),
        Command::Freq { db, top, csv } => cmd_freq(&db, top, csv.as_deref()),
        Command::Rare { db, threshold, json } => cmd_rare(&db, threshold, json.as_deref()),
        Command::Map {
            db,
            binary,
            external,
            threshold,
            json,
        } => cmd_map(&db, binary.as_deref(), external, threshold, json.as_deref()),
        Command::Classify {
            db,
            sets,
            source_root,
            external,
            threshold,
            json,
        } => cmd_classify(
            &db,
            sets.as_deref(),
            source_root.as_deref(),
            external,
            threshold,
            json.as_deref(),
        ),
        Command::Subsets {
            db,
            k,
            threshold,
            disjoint,
            csv,
        } => cmd_subsets(&db, k, threshold, disjoint, csv.as_deref()),
        Command::Fingerprint {
            db,
            binary,
            compare,
            match_id,
            top,
            threshold,
            weighted,
            registry,
        } => cmd_fingerprint(
            &db,
            binary.as_deref(),
            compare.as_deref(),
            match_id.as_deref(),
            top,
            threshold,
            weighted,
            registry.as_deref(),
        ),
        Command::Plot { csv, svg } => cmd_plot(&csv, &svg),
    }
}

fn load_db(path: &Path) -> Result<Corpus, Failure> {
    db::load(path).map_err(usage)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

fn cmd_scan(
    manifest_path: &Path,
    out: &Path,
    tracking: bool,
    sequential: bool,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| usage(format!("reading {}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest = Manifest::parse(&text, base).map_err(usage)?;
    let tracking = tracking && manifest.track_occurrences;

    let entries = manifest.scan_entries();
    let outcome = if sequential {
        rarescope_core::corpus::scan_sequential(
            &entries,
            &manifest.normalization,
            manifest.rare_threshold,
            tracking,
        )
    } else {
        scan(&entries, &manifest.normalization, manifest.rare_threshold, tracking)
    };

    for failure in &outcome.failures {
        eprintln!("warning: {}: {}", failure.path.display(), failure.error);
    }
    for binary in &outcome.corpus.binaries {
        for diagnostic in &binary.diagnostics {
            eprintln!("warning: {}: {diagnostic}", binary.meta.binary_id);
        }
    }
    if outcome.corpus.binaries.is_empty() {
        return Err(Failure {
            code: EXIT_TOTAL_FAILURE,
            message: "all binaries failed to load".to_string(),
        });
    }
    db::save(out, &outcome.corpus).map_err(usage)?;
    println!("{}", report::headline(&outcome.corpus.summary()));
    Ok(())
}

fn cmd_freq(db: &Path, top: Option<usize>, csv: Option<&Path>) -> Result<(), Failure> {
    let corpus = load_db(db)?;
    let table = corpus.merged_table().map_err(|e| usage(e.to_string()))?;
    let ranks = table.rank_distribution();

    if let Some(path) = csv {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| usage(format!("writing {}: {e}", path.display())))?;
        writer.write_record(["rank", "token", "count"]).map_err(|e| usage(e.to_string()))?;
        for entry in &ranks {
            writer
                .write_record([
                    entry.rank.to_string(),
                    entry.token.clone(),
                    entry.count.to_string(),
                ])
                .map_err(|e| usage(e.to_string()))?;
        }
        writer.flush().map_err(|e| usage(e.to_string()))?;
    }
    let shown = top.unwrap_or(20).min(ranks.len());
    for entry in &ranks[..shown] {
        println!("{}\t{}\t{}", entry.rank, entry.count, entry.token);
    }
    Ok(())
}

fn rare_records(
    corpus: &Corpus,
    threshold: Option<u64>,
) -> Result<(u64, Vec<RareRecord>, rarescope_core::stats::RareBucketSummary), Failure> {
    let threshold = threshold.unwrap_or(corpus.rare_threshold);
    if threshold < 1 {
        return Err(usage("threshold must be at least 1"));
    }
    let table = corpus.merged_table().map_err(|e| usage(e.to_string()))?;
    let (records, buckets) = table.rare(threshold).map_err(|e| usage(e.to_string()))?;
    Ok((threshold, records, buckets))
}

fn cmd_rare(db: &Path, threshold: Option<u64>, json: Option<&Path>) -> Result<(), Failure> {
    let corpus = load_db(db)?;
    let (threshold, records, buckets) = rare_records(&corpus, threshold)?;

    println!("rare tokens (count < {threshold}): {}", records.len());
    for bucket in &buckets.buckets {
        println!(
            "  frequency {}: {} tokens, ratio {:.4}",
            bucket.frequency, bucket.token_count, bucket.ratio
        );
    }
    if let Some(path) = json {
        let report = report::build(&corpus, threshold, records, buckets, None);
        write_text(path, &report::to_json(&report))?;
    }
    Ok(())
}

/// Per-binary resolvers for every binary that has debug info; binaries
/// without it degrade to unknown-confidence locations.
fn build_resolvers(
    corpus: &Corpus,
    external: bool,
    only_binary: Option<&str>,
) -> BTreeMap<String, Box<dyn AddressResolver>> {
    let command = std::env::var(ADDR2LINE_ENV).unwrap_or_else(|_| "addr2line".to_string());
    let mut resolvers: BTreeMap<String, Box<dyn AddressResolver>> = BTreeMap::new();
    for binary in &corpus.binaries {
        if let Some(only) = only_binary {
            if binary.meta.binary_id != only {
                continue;
            }
        }
        if !binary.meta.has_debug_info {
            continue;
        }
        if external {
            resolvers.insert(
                binary.meta.binary_id.clone(),
                Box::new(ExternalResolver::new(&command, &binary.meta.path, true)),
            );
        } else {
            match DwarfResolver::new(&binary.meta.path, true) {
                Ok(resolver) => {
                    resolvers.insert(binary.meta.binary_id.clone(), Box::new(resolver));
                }
                Err(err) => {
                    eprintln!("warning: {}: {err}", binary.meta.binary_id);
                }
            }
        }
    }
    resolvers
}

fn cmd_map(
    db: &Path,
    binary: Option<&str>,
    external: bool,
    threshold: Option<u64>,
    json: Option<&Path>,
) -> Result<(), Failure> {
    let corpus = load_db(db)?;
    if let Some(id) = binary {
        if corpus.binary(id).is_none() {
            return Err(usage(format!("no binary `{id}` in corpus")));
        }
    }
    let (threshold, mut records, buckets) = rare_records(&corpus, threshold)?;
    if let Some(id) = binary {
        records.retain(|r| r.sites.iter().any(|s| s.binary_id == id));
    }
    let resolvers = build_resolvers(&corpus, external, binary);
    let records = enrich(records, &resolvers);

    for record in &records {
        for site in &record.sites {
            let location = site.location.as_ref().expect("enriched");
            println!(
                "{}\t{}\t{:#x}\t{}\t{}:{}\t{:?}",
                record.token,
                site.binary_id,
                site.address,
                location.function,
                location.file,
                location.line,
                location.confidence
            );
        }
    }
    if let Some(path) = json {
        let report = report::build(&corpus, threshold, records, buckets, None);
        write_text(path, &report::to_json(&report))?;
    }
    Ok(())
}

/// Reads the mapped source line for every located site, when the file is
/// reachable on this machine.
fn attach_excerpts(records: &mut [RareRecord], source_root: Option<&Path>) {
    let mut cache: BTreeMap<PathBuf, Option<Vec<String>>> = BTreeMap::new();
    for record in records.iter_mut() {
        for site in &mut record.sites {
            if site.source_excerpt.is_some() {
                continue;
            }
            let Some(location) = &site.location else { continue };
            if location.line == 0 || location.file.is_empty() {
                continue;
            }
            let mut candidates = vec![PathBuf::from(&location.file)];
            if let Some(root) = source_root {
                let p = Path::new(&location.file);
                candidates.push(root.join(p));
                if let Some(name) = p.file_name() {
                    candidates.push(root.join(name));
                }
            }
            for candidate in candidates {
                let lines = cache.entry(candidate.clone()).or_insert_with(|| {
                    std::fs::read_to_string(&candidate)
                        .ok()
                        .map(|t| t.lines().map(str::to_string).collect())
                });
                if let Some(lines) = lines {
                    if let Some(line) = lines.get(location.line as usize - 1) {
                        site.source_excerpt = Some(line.trim().to_string());
                        break;
                    }
                }
            }
        }
    }
}

fn cmd_classify(
    db: &Path,
    sets_dir: Option<&Path>,
    source_root: Option<&Path>,
    external: bool,
    threshold: Option<u64>,
    json: Option<&Path>,
) -> Result<(), Failure> {
    let corpus = load_db(db)?;
    let sets = match sets_dir {
        Some(dir) => MnemonicSets::load_dir(dir).map_err(|e| usage(e.to_string()))?,
        None => MnemonicSets::default(),
    };
    let (threshold, records, buckets) = rare_records(&corpus, threshold)?;
    let resolvers = build_resolvers(&corpus, external, None);
    let mut records = enrich(records, &resolvers);
    attach_excerpts(&mut records, source_root);

    let ctx = ClassifyContext {
        sets: &sets,
        binaries: corpus.compiler_tables(),
    };
    for record in &mut records {
        let parts = corpus.vocabulary.get(&record.token);
        record.category = Some(classify(record, parts, &ctx));
    }

    for record in &records {
        let classification = record.category.as_ref().unwrap();
        println!(
            "{}\t{}\t{:?}",
            record.token, record.count, classification.label
        );
        if let Some(evidence) = &classification.evidence {
            for fact in &evidence.facts {
                println!("    {fact}");
            }
        }
    }
    if let Some(path) = json {
        let report = report::build(&corpus, threshold, records, buckets, None);
        write_text(path, &report::to_json(&report))?;
    }
    Ok(())
}

fn cmd_subsets(
    db: &Path,
    k: usize,
    threshold: Option<u64>,
    disjoint: bool,
    csv: Option<&Path>,
) -> Result<(), Failure> {
    let corpus = load_db(db)?;
    let threshold = threshold.unwrap_or(corpus.rare_threshold);
    let tables = corpus.per_binary_tables();
    let points = subset_series(&tables, k, threshold, disjoint).map_err(|e| usage(e.to_string()))?;

    for (idx, point) in points.iter().enumerate() {
        println!(
            "subset {}: {} binaries, {} unique tokens, rare fraction {:.4}",
            idx + 1,
            point.subset_size,
            point.ranks.len(),
            point.rare_fraction
        );
    }
    if let Some(path) = csv {
        write_subsets_csv(path, &points)?;
    }
    Ok(())
}

fn write_subsets_csv(path: &Path, points: &[SubsetPoint]) -> Result<(), Failure> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| usage(format!("writing {}: {e}", path.display())))?;
    writer
        .write_record(["subset_index", "subset_size", "rare_fraction", "rank", "token", "count"])
        .map_err(|e| usage(e.to_string()))?;
    for (idx, point) in points.iter().enumerate() {
        for entry in &point.ranks {
            writer
                .write_record([
                    (idx + 1).to_string(),
                    point.subset_size.to_string(),
                    format!("{:.6}", point.rare_fraction),
                    entry.rank.to_string(),
                    entry.token.clone(),
                    entry.count.to_string(),
                ])
                .map_err(|e| usage(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| usage(e.to_string()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fingerprint(
    db: &Path,
    binary: Option<&str>,
    compare: Option<&[String]>,
    match_id: Option<&str>,
    top: usize,
    threshold: Option<u64>,
    weighted: bool,
    registry_out: Option<&Path>,
) -> Result<(), Failure> {
    let corpus = load_db(db)?;
    let threshold = threshold.unwrap_or(corpus.rare_threshold);
    let merged = corpus.merged_table().map_err(|e| usage(e.to_string()))?;

    let registry: Vec<BinaryFingerprint> = corpus
        .binaries
        .iter()
        .map(|b| {
            fingerprint(&b.meta.binary_id, &b.table, &merged, threshold, weighted)
                .map_err(|e| usage(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let by_id = |id: &str| -> Result<&BinaryFingerprint, Failure> {
        registry
            .iter()
            .find(|f| f.binary_id == id)
            .ok_or_else(|| usage(format!("no binary `{id}` in corpus")))
    };

    if let Some(path) = registry_out {
        let mut text = serde_json::to_string_pretty(&registry).expect("registry serializes");
        text.push('\n');
        write_text(path, &text)?;
    }

    if let Some(id) = binary {
        let fp = by_id(id)?;
        let mut text = serde_json::to_string_pretty(fp).expect("fingerprint serializes");
        text.push('\n');
        print!("{text}");
    } else if let Some(pair) = compare {
        let (a, b) = (by_id(&pair[0])?, by_id(&pair[1])?);
        let score = if weighted {
            weighted_similarity(a, b)
        } else {
            similarity(a, b)
        };
        println!("{:.6}", score);
    } else if let Some(id) = match_id {
        if top < 1 {
            return Err(usage("--top must be at least 1"));
        }
        let query = by_id(id)?.clone();
        for (rank, (candidate, score)) in
            match_against(&query, &registry, top).into_iter().enumerate()
        {
            println!("{}\t{candidate}\t{score:.6}", rank + 1);
        }
    } else if registry_out.is_none() {
        for fp in &registry {
            println!("{}\t{} rare tokens", fp.binary_id, fp.tokens.len());
        }
    }
    Ok(())
}

fn cmd_plot(csv_path: &Path, svg_path: &Path) -> Result<(), Failure> {
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| usage(format!("reading {}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| usage(e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize, Failure> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| usage(format!("{}: missing column `{name}`", csv_path.display())))
    };
    let (c_idx, c_size, c_rank, c_count) = (
        col("subset_index")?,
        col("subset_size")?,
        col("rank")?,
        col("count")?,
    );

    let mut series: BTreeMap<u64, plot::Series> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| usage(e.to_string()))?;
        let parse = |i: usize| -> Result<u64, Failure> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| usage(format!("{}: bad numeric field", csv_path.display())))
        };
        let index = parse(c_idx)?;
        let entry = series.entry(index).or_insert_with(|| plot::Series {
            label: format!("n={}", row.get(c_size).unwrap_or("?")),
            points: Vec::new(),
        });
        entry.points.push((parse(c_rank)?, parse(c_count)?));
    }
    if series.is_empty() {
        return Err(usage(format!("{}: no data rows", csv_path.display())));
    }
    let mut ordered: Vec<plot::Series> = series.into_values().collect();
    for s in &mut ordered {
        s.points.sort_unstable();
    }
    write_text(svg_path, &plot::render(&ordered))?;
    Ok(())
}
