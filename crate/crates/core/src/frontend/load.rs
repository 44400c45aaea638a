//! ELF loading: function discovery via the symbol table, metadata
//! inference from `.comment` and the DWARF producer string, linear-sweep
//! decoding within function boundaries.

use std::borrow::Cow;
use std::path::Path;

use object::{Object, ObjectSection, ObjectSymbol, SectionKind, SymbolKind};

use super::{
    decode_bytes_lossy, Arch, BinaryMeta, Compiler, FrontendError, FunctionRecord, LoadedBinary,
    OptLevel,
};

/// Caller-supplied overrides for metadata the ELF cannot reliably
/// self-describe.
#[derive(Debug, Clone, Default)]
pub struct MetaHints {
    pub binary_id: Option<String>,
    pub compiler: Option<Compiler>,
    pub opt_level: Option<OptLevel>,
}

/// Loads an x86-64 ELF binary and decodes one record per function symbol.
/// Stripped binaries fall back to one record spanning each executable
/// section. Undecodable byte runs truncate the affected record and attach a
/// diagnostic instead of failing the whole binary.
pub fn load_binary(path: &Path, hints: &MetaHints) -> Result<LoadedBinary, FrontendError> {
    let data = std::fs::read(path)?;
    if data.len() < 4 || data[..4] != [0x7f, b'E', b'L', b'F'] {
        return Err(FrontendError::NotAnElf(path.to_path_buf()));
    }
    let obj = object::File::parse(&*data).map_err(|e| FrontendError::Object(e.to_string()))?;
    if obj.architecture() != object::Architecture::X86_64 {
        return Err(FrontendError::WrongArchitecture(format!(
            "{:?}",
            obj.architecture()
        )));
    }

    let binary_id = hints
        .binary_id
        .clone()
        .or_else(|| path.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| path.display().to_string());
    let compiler = hints
        .compiler
        .or_else(|| comment_compiler(&obj))
        .unwrap_or(Compiler::Unknown);
    let opt_level = hints
        .opt_level
        .or_else(|| producer_opt_level(&obj))
        .unwrap_or(OptLevel::Unknown);
    let has_debug_info = section_nonempty(&obj, ".debug_info") || section_nonempty(&obj, ".debug_line");

    let meta = BinaryMeta {
        binary_id,
        path: path.to_path_buf(),
        compiler,
        opt_level,
        has_debug_info,
        arch: Arch::X86_64,
    };

    let mut diagnostics = Vec::new();
    let mut functions = Vec::new();

    let mut symbols: Vec<(u64, u64, String, object::SectionIndex)> = obj
        .symbols()
        .filter(|sym| sym.kind() == SymbolKind::Text && sym.size() > 0 && sym.address() > 0)
        .filter_map(|sym| {
            let section = sym.section_index()?;
            let name = sym.name().ok()?.to_string();
            Some((sym.address(), sym.size(), name, section))
        })
        .collect();
    symbols.sort_by(|a, b| (a.0, &a.2).cmp(&(b.0, &b.2)));

    if symbols.is_empty() {
        // Stripped binary: one synthetic record per executable section.
        for section in obj.sections() {
            if section.kind() != SectionKind::Text || section.size() == 0 {
                continue;
            }
            let start = section.address();
            let bytes = match section.data() {
                Ok(bytes) => bytes,
                Err(_) => continue,
            };
            functions.push(decode_record(
                format!("sub_{start:x}"),
                start,
                bytes,
                &mut diagnostics,
            ));
        }
        return Ok(LoadedBinary { meta, functions, diagnostics });
    }

    let mut max_end = 0u64;
    for (addr, size, name, section_index) in symbols {
        if addr < max_end {
            // Alias or nested symbol; the covering record already owns
            // these addresses and occurrence identity requires each
            // address to be counted once.
            continue;
        }
        let section = match obj.section_by_index(section_index) {
            Ok(s) if s.kind() == SectionKind::Text => s,
            _ => continue,
        };
        let data = match section.data() {
            Ok(d) => d,
            Err(_) => continue,
        };
        let Some(offset) = addr.checked_sub(section.address()) else {
            continue;
        };
        let offset = offset as usize;
        let mut len = size as usize;
        if offset >= data.len() {
            diagnostics.push(format!("function `{name}`: range outside section data"));
            continue;
        }
        if offset + len > data.len() {
            diagnostics.push(format!("function `{name}`: range clamped to section end"));
            len = data.len() - offset;
        }
        max_end = addr + size;
        functions.push(decode_record(
            name,
            addr,
            &data[offset..offset + len],
            &mut diagnostics,
        ));
    }

    Ok(LoadedBinary { meta, functions, diagnostics })
}

fn decode_record(
    name: String,
    start: u64,
    bytes: &[u8],
    diagnostics: &mut Vec<String>,
) -> FunctionRecord {
    let (instructions, failure) = decode_bytes_lossy(bytes, start);
    if let Some(offset) = failure {
        diagnostics.push(format!(
            "function `{name}`: undecodable byte at {:#x}; record truncated",
            start + offset
        ));
    }
    FunctionRecord {
        name,
        start,
        end: start + bytes.len() as u64,
        instructions,
    }
}

fn section_nonempty(obj: &object::File<'_>, name: &str) -> bool {
    obj.section_by_name(name).map(|s| s.size() > 0).unwrap_or(false)
}

/// `.comment` holds one producer string per contributing object file; crt
/// startup objects are usually gcc-built, so a clang marker anywhere wins.
fn comment_compiler(obj: &object::File<'_>) -> Option<Compiler> {
    let section = obj.section_by_name(".comment")?;
    let data = section.data().ok()?;
    let text = String::from_utf8_lossy(data);
    if text.contains("clang") {
        Some(Compiler::Clang)
    } else if text.contains("GCC") || text.contains("gcc") {
        Some(Compiler::Gcc)
    } else {
        None
    }
}

/// gcc records its command-line flags in DW_AT_producer by default when
/// building with -g; clang does not, and falls back to Unknown.
fn producer_opt_level(obj: &object::File<'_>) -> Option<OptLevel> {
    let producer = dwarf_producer(obj)?;
    for token in producer.split_whitespace() {
        match token {
            "-O0" => return Some(OptLevel::O0),
            "-O1" | "-O" => return Some(OptLevel::O1),
            "-O2" => return Some(OptLevel::O2),
            "-O3" => return Some(OptLevel::O3),
            _ => {}
        }
    }
    None
}

fn dwarf_producer(obj: &object::File<'_>) -> Option<String> {
    let load = |id: gimli::SectionId| -> Result<Cow<'_, [u8]>, gimli::Error> {
        Ok(obj
            .section_by_name(id.name())
            .and_then(|s| s.uncompressed_data().ok())
            .unwrap_or(Cow::Borrowed(&[][..])))
    };
    let dwarf_sections = gimli::DwarfSections::load(load).ok()?;
    let endian = if obj.is_little_endian() {
        gimli::RunTimeEndian::Little
    } else {
        gimli::RunTimeEndian::Big
    };
    let dwarf = dwarf_sections.borrow(|section| gimli::EndianSlice::new(section, endian));

    let mut units = dwarf.units();
    while let Ok(Some(header)) = units.next() {
        let Ok(unit) = dwarf.unit(header) else { continue };
        let mut entries = unit.entries();
        let Ok(Some((_, root))) = entries.next_dfs() else { continue };
        let Ok(Some(attr)) = root.attr(gimli::DW_AT_producer) else { continue };
        if let Ok(value) = dwarf.attr_string(&unit, attr.value()) {
            return Some(value.to_string_lossy().into_owned());
        }
    }
    None
}
