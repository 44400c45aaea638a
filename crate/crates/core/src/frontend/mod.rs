//! Decode frontend: loads ELF binaries or textual disassembly and produces
//! streams of structured raw instructions grouped by function.

mod alias;
mod decode;
mod load;
pub mod textual;

pub use alias::canonical_mnemonic;
pub use decode::{decode_bytes, decode_bytes_lossy};
pub use load::{load_binary, MetaHints};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum encoded length of one x86 instruction.
pub const MAX_INSTRUCTION_LEN: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compiler {
    Gcc,
    Clang,
    Unknown,
}

impl std::fmt::Display for Compiler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Compiler::Gcc => write!(f, "gcc"),
            Compiler::Clang => write!(f, "clang"),
            Compiler::Unknown => write!(f, "unknown"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptLevel {
    O0,
    O1,
    O2,
    O3,
    #[serde(rename = "unknown", alias = "Unknown")]
    Unknown,
}

/// The only architecture this tool analyzes. Kept as a typed field so a
/// database self-describes what it was produced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "x86-64")]
    X86_64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMeta {
    /// Stable identifier, unique within one corpus.
    pub binary_id: String,
    pub path: PathBuf,
    pub compiler: Compiler,
    pub opt_level: OptLevel,
    pub has_debug_info: bool,
    pub arch: Arch,
}

/// Memory-operand size keyword, matching Intel disassembly syntax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePrefix {
    BytePtr,
    WordPtr,
    DwordPtr,
    QwordPtr,
    XmmwordPtr,
    YmmwordPtr,
    ZmmwordPtr,
    None,
}

impl SizePrefix {
    /// Token text used inside normalized instructions; `None` renders empty.
    pub fn token(self) -> &'static str {
        match self {
            SizePrefix::BytePtr => "byteptr",
            SizePrefix::WordPtr => "wordptr",
            SizePrefix::DwordPtr => "dwordptr",
            SizePrefix::QwordPtr => "qwordptr",
            SizePrefix::XmmwordPtr => "xmmwordptr",
            SizePrefix::YmmwordPtr => "ymmwordptr",
            SizePrefix::ZmmwordPtr => "zmmwordptr",
            SizePrefix::None => "",
        }
    }

    /// Maps an operand byte size to its keyword; sizes without a keyword
    /// (e.g. 10-byte x87 loads) map to `None`.
    pub fn from_byte_size(size: usize) -> Self {
        match size {
            1 => SizePrefix::BytePtr,
            2 => SizePrefix::WordPtr,
            4 => SizePrefix::DwordPtr,
            8 => SizePrefix::QwordPtr,
            16 => SizePrefix::XmmwordPtr,
            32 => SizePrefix::YmmwordPtr,
            64 => SizePrefix::ZmmwordPtr,
            _ => SizePrefix::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemOperand {
    pub size_prefix: SizePrefix,
    pub base: Option<String>,
    pub index: Option<String>,
    /// 1 when no index register is present.
    pub scale: u8,
    pub displacement: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawOperand {
    Register { name: String },
    Immediate { value: i64 },
    Memory(MemOperand),
    BranchTarget { value: i64 },
    Other { text: String },
}

impl RawOperand {
    pub fn register(name: &str) -> Self {
        RawOperand::Register { name: name.to_string() }
    }

    pub fn immediate(value: i64) -> Self {
        RawOperand::Immediate { value }
    }

    pub fn memory(
        size_prefix: SizePrefix,
        base: Option<&str>,
        index: Option<&str>,
        scale: u8,
        displacement: i64,
    ) -> Self {
        RawOperand::Memory(MemOperand {
            size_prefix,
            base: base.map(str::to_string),
            index: index.map(str::to_string),
            scale,
            displacement,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstruction {
    /// Virtual address of the first byte.
    pub address: u64,
    /// Encoded byte count, 1..=15.
    pub length: u32,
    /// Canonical lowercase mnemonic (already passed through the alias table).
    pub mnemonic: String,
    /// Destination first, matching Intel operand order.
    pub operands: Vec<RawOperand>,
}

impl RawInstruction {
    pub fn new(address: u64, length: u32, mnemonic: &str, operands: Vec<RawOperand>) -> Self {
        RawInstruction {
            address,
            length,
            mnemonic: canonical_mnemonic(mnemonic),
            operands,
        }
    }

    /// Address one past the last byte.
    pub fn end(&self) -> u64 {
        self.address + u64::from(self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    /// Symbol name, or a synthetic `sub_<hex>` when none exists.
    pub name: String,
    pub start: u64,
    /// Exclusive end address.
    pub end: u64,
    pub instructions: Vec<RawInstruction>,
}

/// Result of loading one binary: metadata, per-function instruction streams,
/// and non-fatal diagnostics (truncated decodes and the like).
#[derive(Debug, Clone)]
pub struct LoadedBinary {
    pub meta: BinaryMeta,
    pub functions: Vec<FunctionRecord>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("not an ELF file: {0}")]
    NotAnElf(PathBuf),
    #[error("wrong architecture (expected x86-64): {0}")]
    WrongArchitecture(String),
    #[error("undecodable byte at offset {offset:#x}")]
    DecodeFailure { offset: u64 },
    #[error("line {line}: syntax error: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("line {line}: unknown register `{name}`")]
    UnknownRegister { line: usize, name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed object file: {0}")]
    Object(String),
}
