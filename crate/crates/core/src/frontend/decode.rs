//! Byte-level decoding via iced-x86, converted into the structured raw
//! instruction form shared with the textual frontend.

use iced_x86::{
    Decoder, DecoderOptions, Formatter, FormatterOutput, FormatterTextKind, Instruction,
    IntelFormatter, OpKind, Register,
};

use super::{canonical_mnemonic, FrontendError, MemOperand, RawInstruction, RawOperand, SizePrefix};

/// Linear-sweep decode of a byte run. Every byte must decode; the first
/// undecodable byte aborts with its offset.
pub fn decode_bytes(bytes: &[u8], base_address: u64) -> Result<Vec<RawInstruction>, FrontendError> {
    let (instructions, failure) = decode_bytes_lossy(bytes, base_address);
    match failure {
        None => Ok(instructions),
        Some(offset) => Err(FrontendError::DecodeFailure { offset }),
    }
}

/// Linear-sweep decode that truncates at the first undecodable byte instead
/// of failing, returning the offset of that byte when present.
pub fn decode_bytes_lossy(bytes: &[u8], base_address: u64) -> (Vec<RawInstruction>, Option<u64>) {
    let mut decoder = Decoder::with_ip(64, bytes, base_address, DecoderOptions::NONE);
    let mut instruction = Instruction::default();
    let mut sink = MnemonicSink::default();
    let mut formatter = IntelFormatter::new();
    let mut out = Vec::new();
    while decoder.can_decode() {
        let offset = decoder.position() as u64;
        decoder.decode_out(&mut instruction);
        if instruction.is_invalid() {
            return (out, Some(offset));
        }
        out.push(convert(&instruction, &mut formatter, &mut sink));
    }
    (out, None)
}

/// Captures only the mnemonic token the formatter emits, so pseudo-op
/// spellings (vcmpeq_usss and friends) match what textual disassemblers
/// print.
#[derive(Default)]
struct MnemonicSink {
    text: String,
}

impl FormatterOutput for MnemonicSink {
    fn write(&mut self, text: &str, kind: FormatterTextKind) {
        if kind == FormatterTextKind::Mnemonic && self.text.is_empty() {
            self.text.push_str(text);
        }
    }
}

fn convert(
    ins: &Instruction,
    formatter: &mut IntelFormatter,
    sink: &mut MnemonicSink,
) -> RawInstruction {
    sink.text.clear();
    formatter.format_mnemonic(ins, sink);
    let mnemonic = canonical_mnemonic(sink.text.trim());

    let mut operands = Vec::with_capacity(ins.op_count() as usize);
    for op in 0..ins.op_count() {
        operands.push(convert_operand(ins, op));
    }
    RawInstruction {
        address: ins.ip(),
        length: ins.len() as u32,
        mnemonic,
        operands,
    }
}

fn convert_operand(ins: &Instruction, op: u32) -> RawOperand {
    match ins.op_kind(op) {
        OpKind::Register => RawOperand::Register {
            name: register_name(ins.op_register(op)),
        },
        OpKind::NearBranch16 | OpKind::NearBranch32 | OpKind::NearBranch64 => {
            RawOperand::BranchTarget {
                value: ins.near_branch_target() as i64,
            }
        }
        OpKind::FarBranch16 | OpKind::FarBranch32 => RawOperand::Other {
            text: "far_branch".to_string(),
        },
        OpKind::Immediate8
        | OpKind::Immediate8_2nd
        | OpKind::Immediate16
        | OpKind::Immediate32
        | OpKind::Immediate64
        | OpKind::Immediate8to16
        | OpKind::Immediate8to32
        | OpKind::Immediate8to64
        | OpKind::Immediate32to64 => RawOperand::Immediate {
            value: ins.immediate(op) as i64,
        },
        OpKind::Memory => convert_memory(ins),
        // Implicit string-op memory operands.
        OpKind::MemorySegSI | OpKind::MemorySegESI | OpKind::MemorySegRSI => {
            implicit_memory(ins, "rsi")
        }
        OpKind::MemorySegDI | OpKind::MemorySegEDI | OpKind::MemorySegRDI => {
            implicit_memory(ins, "rdi")
        }
        OpKind::MemoryESDI | OpKind::MemoryESEDI | OpKind::MemoryESRDI => {
            implicit_memory(ins, "rdi")
        }
    }
}

fn implicit_memory(ins: &Instruction, base: &str) -> RawOperand {
    RawOperand::Memory(MemOperand {
        size_prefix: SizePrefix::from_byte_size(ins.memory_size().size()),
        base: Some(base.to_string()),
        index: None,
        scale: 1,
        displacement: 0,
    })
}

fn convert_memory(ins: &Instruction) -> RawOperand {
    let base = ins.memory_base();
    let index = ins.memory_index();
    // iced folds the next instruction pointer into RIP-relative
    // displacements; recover the raw encoded offset so both frontends agree.
    let displacement = if ins.is_ip_rel_memory_operand() {
        ins.ip_rel_memory_address().wrapping_sub(ins.next_ip()) as i64
    } else {
        ins.memory_displacement64() as i64
    };
    RawOperand::Memory(MemOperand {
        size_prefix: SizePrefix::from_byte_size(ins.memory_size().size()),
        base: (base != Register::None).then(|| register_name(base)),
        index: (index != Register::None).then(|| register_name(index)),
        scale: ins.memory_index_scale() as u8,
        displacement,
    })
}

fn register_name(reg: Register) -> String {
    let name = format!("{reg:?}").to_ascii_lowercase();
    // iced spells the REX byte registers r8l..r15l; Intel disassembly
    // (and the register class table) uses r8b..r15b.
    match name.strip_suffix('l') {
        Some(prefix) if prefix.starts_with('r') && prefix[1..].chars().all(|c| c.is_ascii_digit()) => {
            format!("{prefix}b")
        }
        _ => name,
    }
}
