//! Address-to-source mapping through DWARF line tables, with an optional
//! adapter that shells out to an addr2line-compatible command. Confidence
//! is explicit data: line tables are not always trustworthy and downstream
//! stages must be able to tell an exact row from a best-effort guess.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use gimli::Reader as _;
use object::{Object, ObjectSection, ObjectSymbol, SymbolKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::RareRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    /// A line-table row covers the address.
    Exact,
    /// The address sits inside an inlined call chain; the innermost frame
    /// is reported and the full chain retained.
    Inlined,
    /// No usable row covers the address; the nearest preceding row in the
    /// same sequence is reported.
    Approximate,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFrame {
    pub file: String,
    pub line: u32,
    pub function: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLocation {
    /// Path as stored in DWARF (compilation-directory-relative when the
    /// producer wrote it that way); no filesystem check is performed.
    pub file: String,
    /// 1-based; 0 only when confidence is `unknown`.
    pub line: u32,
    pub function: String,
    pub confidence: Confidence,
    /// Innermost-first inline chain, kept so either attribution of an
    /// inlined occurrence is recoverable.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inline_chain: Vec<SourceFrame>,
}

impl SourceLocation {
    pub fn unknown() -> Self {
        SourceLocation {
            file: String::new(),
            line: 0,
            function: String::new(),
            confidence: Confidence::Unknown,
            inline_chain: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("binary has no debug info")]
    NoDebugInfo,
    #[error("address {0:#x} outside all line-table sequences")]
    AddressOutOfRange(u64),
    #[error("resolver failure: {0}")]
    Resolver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can turn an address inside one binary into a source
/// location.
pub trait AddressResolver {
    fn map_address(&self, address: u64) -> Result<SourceLocation, MapError>;
}

type Reader = gimli::EndianReader<gimli::RunTimeEndian, Arc<[u8]>>;

/// In-process DWARF resolver for one binary.
pub struct DwarfResolver {
    context: addr2line::Context<Reader>,
    rows: LineIndex,
    /// Function symbols for name fallback when DWARF lacks a subprogram.
    symbols: Vec<(u64, u64, String)>,
    lenient: bool,
}

impl DwarfResolver {
    /// Loads the binary at `path`. `lenient` turns out-of-range addresses
    /// into unknown-confidence locations instead of errors.
    pub fn new(path: &Path, lenient: bool) -> Result<Self, MapError> {
        let data = std::fs::read(path)?;
        let obj = object::File::parse(&*data)
            .map_err(|e| MapError::Resolver(format!("object parse: {e}")))?;
        let has_debug = obj
            .section_by_name(".debug_line")
            .map(|s| s.size() > 0)
            .unwrap_or(false);
        if !has_debug {
            return Err(MapError::NoDebugInfo);
        }
        let endian = if obj.is_little_endian() {
            gimli::RunTimeEndian::Little
        } else {
            gimli::RunTimeEndian::Big
        };
        let load = |id: gimli::SectionId| -> Result<Reader, gimli::Error> {
            let data = obj
                .section_by_name(id.name())
                .and_then(|s| s.uncompressed_data().ok())
                .unwrap_or(Cow::Borrowed(&[][..]));
            Ok(gimli::EndianReader::new(Arc::from(data.as_ref()), endian))
        };
        let dwarf = gimli::Dwarf::load(load).map_err(|e| MapError::Resolver(e.to_string()))?;
        let rows = LineIndex::build(&dwarf).map_err(|e| MapError::Resolver(e.to_string()))?;
        let context = addr2line::Context::from_dwarf(dwarf)
            .map_err(|e| MapError::Resolver(e.to_string()))?;

        let mut symbols: Vec<(u64, u64, String)> = obj
            .symbols()
            .filter(|s| s.kind() == SymbolKind::Text && s.size() > 0)
            .filter_map(|s| Some((s.address(), s.size(), s.name().ok()?.to_string())))
            .collect();
        symbols.sort_unstable_by_key(|&(start, _, _)| start);

        Ok(DwarfResolver {
            context,
            rows,
            symbols,
            lenient,
        })
    }

    fn symbol_name(&self, address: u64) -> Option<String> {
        let idx = self.symbols.partition_point(|&(start, _, _)| start <= address);
        let (start, size, name) = self.symbols.get(idx.checked_sub(1)?)?;
        (address < start + size).then(|| name.clone())
    }

    fn frames(&self, address: u64) -> Result<Vec<SourceFrame>, MapError> {
        let lookup = self.context.find_frames(address);
        let mut iter = lookup
            .skip_all_loads()
            .map_err(|e| MapError::Resolver(e.to_string()))?;
        let mut frames = Vec::new();
        while let Some(frame) = iter.next().map_err(|e| MapError::Resolver(e.to_string()))? {
            let function = frame
                .function
                .as_ref()
                .and_then(|f| f.demangle().ok())
                .map(Cow::into_owned)
                .unwrap_or_default();
            let (file, line) = match frame.location {
                Some(loc) => (
                    loc.file.unwrap_or("").to_string(),
                    loc.line.unwrap_or(0),
                ),
                None => (String::new(), 0),
            };
            frames.push(SourceFrame { file, line, function });
        }
        Ok(frames)
    }
}

impl AddressResolver for DwarfResolver {
    /// Resolves through the DWARF line table. Inlined call chains report
    /// the innermost frame with the chain attached; addresses with no
    /// usable row degrade to the nearest preceding row (`approximate`).
    fn map_address(&self, address: u64) -> Result<SourceLocation, MapError> {
        let row = self.rows.lookup(address);
        let frames = self.frames(address)?;

        if row.is_none() && frames.is_empty() {
            if self.lenient {
                return Ok(SourceLocation::unknown());
            }
            return Err(MapError::AddressOutOfRange(address));
        }

        // addr2line yields the innermost inlined frame first.
        let innermost = frames.first();
        let function = innermost
            .map(|f| f.function.clone())
            .filter(|name| !name.is_empty())
            .or_else(|| self.symbol_name(address))
            .unwrap_or_default();

        let (file, line, confidence) = match &row {
            Some(resolved) => (resolved.file.clone(), resolved.line, resolved.confidence),
            None => match innermost {
                Some(f) if f.line > 0 => (f.file.clone(), f.line, Confidence::Approximate),
                _ => {
                    if self.lenient {
                        return Ok(SourceLocation::unknown());
                    }
                    return Err(MapError::AddressOutOfRange(address));
                }
            },
        };
        let confidence = if frames.len() > 1 {
            Confidence::Inlined
        } else {
            confidence
        };
        Ok(SourceLocation {
            file,
            line,
            function,
            confidence,
            inline_chain: if frames.len() > 1 { frames } else { Vec::new() },
        })
    }
}

struct ResolvedRow {
    file: String,
    line: u32,
    confidence: Confidence,
}

/// Flat index over every line-program row, grouped into monotone address
/// sequences, so near-miss lookups can degrade gracefully instead of
/// failing.
struct LineIndex {
    files: Vec<String>,
    /// (start, end, rows) per monotone address sequence.
    sequences: Vec<(u64, u64, Vec<IndexedRow>)>,
}

/// (address, file slot, line).
type IndexedRow = (u64, u32, u32);

impl LineIndex {
    fn build(dwarf: &gimli::Dwarf<Reader>) -> Result<Self, gimli::Error> {
        let mut files = Vec::new();
        let mut file_slots: BTreeMap<String, u32> = BTreeMap::new();
        let mut sequences = Vec::new();

        let mut units = dwarf.units();
        while let Some(header) = units.next()? {
            let unit = dwarf.unit(header)?;
            let Some(program) = unit.line_program.clone() else {
                continue;
            };
            let comp_dir = unit
                .comp_dir
                .as_ref()
                .and_then(|d| d.to_string_lossy().ok())
                .map(Cow::into_owned)
                .unwrap_or_default();

            let mut current: Vec<IndexedRow> = Vec::new();
            let mut rows = program.rows();
            while let Some((header, row)) = rows.next_row()? {
                if row.end_sequence() {
                    if let Some(&(start, _, _)) = current.first() {
                        sequences.push((start, row.address(), std::mem::take(&mut current)));
                    } else {
                        current.clear();
                    }
                    continue;
                }
                let file = match row.file(header) {
                    Some(entry) => render_file(dwarf, &unit, header, entry, &comp_dir),
                    None => String::new(),
                };
                let slot = *file_slots.entry(file.clone()).or_insert_with(|| {
                    files.push(file);
                    files.len() as u32 - 1
                });
                let line = row.line().map(|l| l.get() as u32).unwrap_or(0);
                current.push((row.address(), slot, line));
            }
        }
        sequences.sort_unstable_by_key(|&(start, _, _)| start);
        Ok(LineIndex { files, sequences })
    }

    fn lookup(&self, address: u64) -> Option<ResolvedRow> {
        let idx = self
            .sequences
            .partition_point(|&(start, _, _)| start <= address)
            .checked_sub(1)?;
        let (start, end, rows) = &self.sequences[idx];
        if address < *start || address >= *end {
            return None;
        }
        let row_idx = rows
            .partition_point(|&(addr, _, _)| addr <= address)
            .checked_sub(1)?;
        let (_, slot, line) = rows[row_idx];
        if line > 0 {
            return Some(ResolvedRow {
                file: self.files[slot as usize].clone(),
                line,
                confidence: Confidence::Exact,
            });
        }
        // Line 0 means "no source"; fall back to the nearest preceding
        // row that names a line.
        for &(_, slot, line) in rows[..row_idx].iter().rev() {
            if line > 0 {
                return Some(ResolvedRow {
                    file: self.files[slot as usize].clone(),
                    line,
                    confidence: Confidence::Approximate,
                });
            }
        }
        None
    }
}

fn render_file(
    dwarf: &gimli::Dwarf<Reader>,
    unit: &gimli::Unit<Reader>,
    header: &gimli::LineProgramHeader<Reader>,
    entry: &gimli::FileEntry<Reader>,
    comp_dir: &str,
) -> String {
    let mut path = PathBuf::new();
    let name = dwarf
        .attr_string(unit, entry.path_name())
        .ok()
        .and_then(|s| s.to_string_lossy().ok().map(Cow::into_owned))
        .unwrap_or_default();
    if !name.starts_with('/') {
        if !comp_dir.is_empty() {
            path.push(comp_dir);
        }
        if let Some(dir) = entry.directory(header) {
            if let Some(dir) = dwarf
                .attr_string(unit, dir)
                .ok()
                .and_then(|s| s.to_string_lossy().ok().map(Cow::into_owned))
            {
                if !dir.is_empty() && dir != "." {
                    if dir.starts_with('/') {
                        path = PathBuf::from(dir);
                    } else {
                        path.push(dir);
                    }
                }
            }
        }
    }
    path.push(name);
    path.to_string_lossy().into_owned()
}

/// Shells out to an addr2line-compatible command (`-f -e <binary> <addr>`)
/// and parses its two-line output. External results carry `exact`
/// confidence when the tool names a file and line; it cannot distinguish
/// inlining without `-i`, which mirrors its default behavior.
pub struct ExternalResolver {
    command: PathBuf,
    binary: PathBuf,
    lenient: bool,
}

impl ExternalResolver {
    pub fn new(command: impl Into<PathBuf>, binary: impl Into<PathBuf>, lenient: bool) -> Self {
        ExternalResolver {
            command: command.into(),
            binary: binary.into(),
            lenient,
        }
    }
}

impl AddressResolver for ExternalResolver {
    fn map_address(&self, address: u64) -> Result<SourceLocation, MapError> {
        let output = Command::new(&self.command)
            .arg("-f")
            .arg("-e")
            .arg(&self.binary)
            .arg(format!("{address:#x}"))
            .output()?;
        if !output.status.success() {
            return Err(MapError::Resolver(format!(
                "{} exited with {}",
                self.command.display(),
                output.status
            )));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let mut lines = text.lines();
        let function = lines.next().unwrap_or("??").trim().to_string();
        let location = lines.next().unwrap_or("??:0").trim().to_string();
        match parse_file_line(&location) {
            Some((file, line)) => Ok(SourceLocation {
                file,
                line,
                function: if function == "??" { String::new() } else { function },
                confidence: Confidence::Exact,
                inline_chain: Vec::new(),
            }),
            None if self.lenient => Ok(SourceLocation::unknown()),
            None => Err(MapError::AddressOutOfRange(address)),
        }
    }
}

/// Parses `file:line` with optional ` (discriminator N)` suffix; `??` and
/// line 0 mean the tool had no answer.
fn parse_file_line(text: &str) -> Option<(String, u32)> {
    let text = match text.find(" (") {
        Some(pos) => &text[..pos],
        None => text,
    };
    let colon = text.rfind(':')?;
    let (file, line) = (&text[..colon], &text[colon + 1..]);
    if file.is_empty() || file == "??" {
        return None;
    }
    let line: u32 = line.parse().ok()?;
    if line == 0 {
        return None;
    }
    Some((file.to_string(), line))
}

/// Attaches a source location to every occurrence site of every record.
/// Sites whose binary has no resolver (or whose resolution fails) get an
/// unknown-confidence location rather than aborting the batch. Already
/// enriched sites are left alone, which makes the operation idempotent.
pub fn enrich(
    records: Vec<RareRecord>,
    resolvers: &BTreeMap<String, Box<dyn AddressResolver>>,
) -> Vec<RareRecord> {
    let mut records = records;
    for record in &mut records {
        for site in &mut record.sites {
            if site.location.is_some() {
                continue;
            }
            let location = resolvers
                .get(&site.binary_id)
                .map(|resolver| {
                    resolver
                        .map_address(site.address)
                        .unwrap_or_else(|_| SourceLocation::unknown())
                })
                .unwrap_or_else(SourceLocation::unknown);
            site.location = Some(location);
        }
    }
    records
}
