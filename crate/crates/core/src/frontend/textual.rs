//! Textual disassembly frontend, compatible with `objdump -d -M intel`
//! output. Function headers look like `<hex addr> <<name>>:`, instruction
//! lines like `<hex addr>:\t<hex bytes>\t<mnemonic> <operands>`.

use super::{
    canonical_mnemonic, FrontendError, FunctionRecord, MemOperand, RawInstruction, RawOperand,
    SizePrefix,
};
use crate::normalize::is_register;

/// Instruction prefixes that are not part of token identity.
const PREFIX_TOKENS: &[&str] = &[
    "lock", "rep", "repe", "repz", "repne", "repnz", "notrack", "bnd", "data16", "data32",
    "addr32", "cs", "ds", "es", "fs", "gs", "ss",
];

/// Parses a whole disassembly listing into function records. Instructions
/// appearing before any header are grouped under a synthetic `sub_<hex>`
/// record.
pub fn parse_textual_disassembly(text: &str) -> Result<Vec<FunctionRecord>, FrontendError> {
    let mut functions: Vec<FunctionRecord> = Vec::new();
    let mut current: Option<FunctionRecord> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end();
        if line.trim().is_empty()
            || line.starts_with("Disassembly of section")
            || line.contains("file format")
            || line.trim() == "..."
        {
            continue;
        }

        if let Some(header) = parse_function_header(line) {
            let (start, name) = header?;
            if let Some(done) = current.take() {
                functions.push(done);
            }
            current = Some(FunctionRecord {
                name,
                start,
                end: start,
                instructions: Vec::new(),
            });
            continue;
        }

        match parse_instruction_line(line, line_no)? {
            ParsedLine::Instruction(ins) => {
                let record = current.get_or_insert_with(|| FunctionRecord {
                    name: format!("sub_{:x}", ins.address),
                    start: ins.address,
                    end: ins.address,
                    instructions: Vec::new(),
                });
                record.end = record.end.max(ins.end());
                record.instructions.push(ins);
            }
            ParsedLine::Continuation { address, bytes } => {
                let record = current.as_mut().and_then(|r| r.instructions.last_mut());
                match record {
                    Some(prev) if prev.end() == address => {
                        prev.length += bytes;
                    }
                    _ => {
                        return Err(FrontendError::SyntaxError {
                            line: line_no,
                            message: "byte continuation without a preceding instruction".into(),
                        })
                    }
                }
                if let Some(r) = current.as_mut() {
                    let end = r.instructions.last().map(|i| i.end()).unwrap_or(r.end);
                    r.end = r.end.max(end);
                }
            }
            ParsedLine::Skip => {}
        }
    }
    if let Some(done) = current.take() {
        functions.push(done);
    }
    Ok(functions)
}

type HeaderResult = Result<(u64, String), FrontendError>;

fn parse_function_header(line: &str) -> Option<HeaderResult> {
    let trimmed = line.trim();
    if !trimmed.ends_with(">:") {
        return None;
    }
    let open = trimmed.find('<')?;
    let addr_part = trimmed[..open].trim();
    if addr_part.is_empty() || !addr_part.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let name = trimmed[open + 1..trimmed.len() - 2].to_string();
    Some(match u64::from_str_radix(addr_part, 16) {
        Ok(addr) => Ok((addr, name)),
        Err(_) => Err(FrontendError::SyntaxError {
            line: 0,
            message: format!("bad header address `{addr_part}`"),
        }),
    })
}

enum ParsedLine {
    Instruction(RawInstruction),
    Continuation { address: u64, bytes: u32 },
    Skip,
}

fn parse_instruction_line(line: &str, line_no: usize) -> Result<ParsedLine, FrontendError> {
    let colon = match line.find(':') {
        Some(pos) => pos,
        None => {
            return Err(FrontendError::SyntaxError {
                line: line_no,
                message: "missing address field".into(),
            })
        }
    };
    let addr_text = line[..colon].trim();
    if addr_text.is_empty() || !addr_text.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(FrontendError::SyntaxError {
            line: line_no,
            message: format!("bad address `{addr_text}`"),
        });
    }
    let address =
        u64::from_str_radix(addr_text, 16).map_err(|_| FrontendError::SyntaxError {
            line: line_no,
            message: format!("address `{addr_text}` out of range"),
        })?;

    // Strip relocation-style annotations and comments before tokenizing.
    let mut rest = line[colon + 1..].to_string();
    if let Some(pos) = rest.find('#') {
        rest.truncate(pos);
    }
    if let Some(pos) = rest.find('<') {
        rest.truncate(pos);
    }

    let tokens: Vec<&str> = rest.split_whitespace().collect();
    // Leading 2-hex-digit tokens are the encoded bytes.
    let mut byte_count: u32 = 0;
    let mut i = 0;
    while i < tokens.len() && is_byte_pair(tokens[i]) {
        byte_count += 1;
        i += 1;
    }
    if i == tokens.len() {
        if byte_count == 0 {
            return Ok(ParsedLine::Skip);
        }
        return Ok(ParsedLine::Continuation { address, bytes: byte_count });
    }
    // Prefixes are dropped: token identity must not depend on them.
    while i + 1 < tokens.len() && is_prefix_token(tokens[i]) {
        i += 1;
    }
    let raw_mnemonic = tokens[i];
    if raw_mnemonic == "(bad)" {
        return Err(FrontendError::SyntaxError {
            line: line_no,
            message: "undecodable instruction `(bad)`".into(),
        });
    }
    let mnemonic = canonical_mnemonic(raw_mnemonic);
    let operand_text = tokens[i + 1..].join(" ");

    let mut operands = Vec::new();
    if !operand_text.trim().is_empty() {
        for piece in split_top_level_commas(&operand_text) {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            operands.push(parse_operand(piece, &mnemonic, line_no)?);
        }
    }
    Ok(ParsedLine::Instruction(RawInstruction {
        address,
        length: byte_count.max(1),
        mnemonic,
        operands,
    }))
}

fn is_byte_pair(token: &str) -> bool {
    token.len() == 2 && token.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())
}

fn is_prefix_token(token: &str) -> bool {
    PREFIX_TOKENS.contains(&token) || token.starts_with("rex")
}

fn split_top_level_commas(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (pos, ch) in text.char_indices() {
        match ch {
            '[' | '(' => depth += 1,
            ']' | ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&text[start..pos]);
                start = pos + 1;
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

fn parse_operand(
    text: &str,
    mnemonic: &str,
    line_no: usize,
) -> Result<RawOperand, FrontendError> {
    // AVX-512 decorations ({k1}, {z}, {1to8}) are not part of operand shape.
    let cleaned = strip_decorations(text);
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        return Err(FrontendError::SyntaxError {
            line: line_no,
            message: "empty operand".into(),
        });
    }

    if let Some((size, rest)) = split_size_prefix(cleaned) {
        return parse_memory(rest.trim(), size, line_no);
    }
    if cleaned.starts_with('[') || memory_with_segment(cleaned).is_some() {
        return parse_memory(cleaned, SizePrefix::None, line_no);
    }

    if let Some(name) = canonical_register_name(cleaned) {
        return Ok(RawOperand::Register { name });
    }

    // Branch targets are printed as bare hex without the 0x prefix.
    if is_branch_mnemonic(mnemonic) {
        if let Ok(value) = u64::from_str_radix(cleaned, 16) {
            return Ok(RawOperand::BranchTarget { value: value as i64 });
        }
        if let Some(value) = parse_number(cleaned) {
            return Ok(RawOperand::BranchTarget { value });
        }
    }
    if let Some(value) = parse_number(cleaned) {
        return Ok(RawOperand::Immediate { value });
    }

    if cleaned.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(FrontendError::UnknownRegister {
            line: line_no,
            name: cleaned.to_string(),
        });
    }
    Err(FrontendError::SyntaxError {
        line: line_no,
        message: format!("unparseable operand `{text}`"),
    })
}

fn strip_decorations(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for ch in text.chars() {
        match ch {
            '{' => depth += 1,
            '}' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(ch),
            _ => {}
        }
    }
    out
}

fn split_size_prefix(text: &str) -> Option<(SizePrefix, &str)> {
    let lower = text.to_ascii_lowercase();
    let keywords: &[(&str, SizePrefix)] = &[
        ("byte ptr", SizePrefix::BytePtr),
        ("word ptr", SizePrefix::WordPtr),
        ("dword ptr", SizePrefix::DwordPtr),
        ("qword ptr", SizePrefix::QwordPtr),
        ("tbyte ptr", SizePrefix::None),
        ("fword ptr", SizePrefix::None),
        ("oword ptr", SizePrefix::XmmwordPtr),
        ("xmmword ptr", SizePrefix::XmmwordPtr),
        ("ymmword ptr", SizePrefix::YmmwordPtr),
        ("zmmword ptr", SizePrefix::ZmmwordPtr),
    ];
    for (kw, size) in keywords {
        if lower.starts_with(kw) {
            return Some((*size, &text[kw.len()..]));
        }
    }
    None
}

/// `fs:0x28` / `ds:[rax]` style operands; returns the part after the
/// segment override.
fn memory_with_segment(text: &str) -> Option<&str> {
    let pos = text.find(':')?;
    let seg = &text[..pos];
    if ["cs", "ds", "es", "fs", "gs", "ss"].contains(&seg.to_ascii_lowercase().as_str()) {
        Some(&text[pos + 1..])
    } else {
        None
    }
}

fn parse_memory(
    text: &str,
    size: SizePrefix,
    line_no: usize,
) -> Result<RawOperand, FrontendError> {
    let body = memory_with_segment(text).unwrap_or(text).trim();
    // Absolute address without brackets (`ds:0x602010` moffs form).
    if !body.starts_with('[') {
        if let Some(value) = parse_number(body) {
            return Ok(RawOperand::Memory(MemOperand {
                size_prefix: size,
                base: None,
                index: None,
                scale: 1,
                displacement: value,
            }));
        }
        return Err(FrontendError::SyntaxError {
            line: line_no,
            message: format!("unparseable memory operand `{text}`"),
        });
    }
    let inner = body
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| FrontendError::SyntaxError {
            line: line_no,
            message: format!("unbalanced brackets in `{text}`"),
        })?;

    let mut base: Option<String> = None;
    let mut index: Option<String> = None;
    let mut scale: u8 = 1;
    let mut displacement: i64 = 0;

    for (negative, term) in signed_terms(inner) {
        let term = term.trim();
        if term.is_empty() {
            continue;
        }
        if let Some(star) = term.find('*') {
            let (reg_part, scale_part) = (term[..star].trim(), term[star + 1..].trim());
            // objdump renders a suppressed index as eiz/riz; drop it.
            if reg_part == "riz" || reg_part == "eiz" {
                continue;
            }
            let name =
                canonical_register_name(reg_part).ok_or_else(|| FrontendError::UnknownRegister {
                    line: line_no,
                    name: reg_part.to_string(),
                })?;
            let s: u8 = scale_part.parse().map_err(|_| FrontendError::SyntaxError {
                line: line_no,
                message: format!("bad scale `{scale_part}`"),
            })?;
            index = Some(name);
            scale = s;
        } else if let Some(value) = parse_number(term) {
            displacement += if negative { -value } else { value };
        } else if term == "riz" || term == "eiz" {
            continue;
        } else if let Some(name) = canonical_register_name(term) {
            if base.is_none() {
                base = Some(name);
            } else if index.is_none() {
                index = Some(name);
                scale = 1;
            } else {
                return Err(FrontendError::SyntaxError {
                    line: line_no,
                    message: format!("too many registers in `{text}`"),
                });
            }
        } else if term.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(FrontendError::UnknownRegister {
                line: line_no,
                name: term.to_string(),
            });
        } else {
            return Err(FrontendError::SyntaxError {
                line: line_no,
                message: format!("unparseable memory term `{term}`"),
            });
        }
    }
    Ok(RawOperand::Memory(MemOperand {
        size_prefix: size,
        base,
        index,
        scale,
        displacement,
    }))
}

/// Splits `rax+rcx*4-0x8` into sign-tagged terms.
fn signed_terms(text: &str) -> Vec<(bool, &str)> {
    let mut terms = Vec::new();
    let mut negative = false;
    let mut start = 0usize;
    for (pos, ch) in text.char_indices() {
        if (ch == '+' || ch == '-') && pos > start {
            terms.push((negative, &text[start..pos]));
            negative = ch == '-';
            start = pos + 1;
        } else if (ch == '+' || ch == '-') && pos == start {
            negative = ch == '-';
            start = pos + 1;
        }
    }
    if start < text.len() {
        terms.push((negative, &text[start..]));
    }
    terms
}

fn canonical_register_name(text: &str) -> Option<String> {
    let lower = text.to_ascii_lowercase();
    let name = if lower == "st" {
        "st0".to_string()
    } else if let Some(idx) = lower.strip_prefix("st(").and_then(|s| s.strip_suffix(')')) {
        format!("st{idx}")
    } else {
        lower
    };
    if is_register(&name) {
        Some(name)
    } else {
        None
    }
}

fn parse_number(text: &str) -> Option<i64> {
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()? as i64
    } else if body.chars().all(|c| c.is_ascii_digit()) && !body.is_empty() {
        body.parse::<i64>().ok()?
    } else {
        return None;
    };
    Some(if negative { value.wrapping_neg() } else { value })
}

fn is_branch_mnemonic(mnemonic: &str) -> bool {
    mnemonic.starts_with('j')
        || matches!(mnemonic, "call" | "loop" | "loope" | "loopne" | "xbegin")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_ret_line() {
        let funcs = parse_textual_disassembly("401000: c3 ret\n").unwrap();
        assert_eq!(funcs.len(), 1);
        let ins = &funcs[0].instructions[0];
        assert_eq!(ins.address, 0x401000);
        assert_eq!(ins.mnemonic, "ret");
        assert_eq!(ins.length, 1);
        assert!(ins.operands.is_empty());
    }

    #[test]
    fn opmask_operand_order_is_preserved() {
        let text = "0000000000401010 <f>:\n  401010:\t65 f8\tkortestw k1,k0\n";
        let funcs = parse_textual_disassembly(text).unwrap();
        let ins = &funcs[0].instructions[0];
        assert_eq!(ins.mnemonic, "kortestw");
        assert_eq!(
            ins.operands,
            vec![RawOperand::register("k1"), RawOperand::register("k0")]
        );
    }

    #[test]
    fn objdump_style_function_listing() {
        let text = "\n\
            bin:     file format elf64-x86-64\n\
            \n\
            Disassembly of section .text:\n\
            \n\
            0000000000001129 <main>:\n\
                1129:\tf3 0f 1e fa          \tendbr64\n\
                112d:\t55                   \tpush   rbp\n\
                112e:\t48 8b 04 25 28 00 00 \tmov    rax,QWORD PTR ds:0x28\n\
                1135:\t00 \n\
                1136:\t8b 45 fc             \tmov    eax,DWORD PTR [rbp-0x4]\n\
                1139:\te8 f2 fe ff ff       \tcall   1030 <puts@plt>\n\
                113e:\tc3                   \tret\n";
        let funcs = parse_textual_disassembly(text).unwrap();
        assert_eq!(funcs.len(), 1);
        let f = &funcs[0];
        assert_eq!(f.name, "main");
        assert_eq!(f.start, 0x1129);
        assert_eq!(f.instructions.len(), 6);
        // continuation line folded into the previous instruction
        assert_eq!(f.instructions[2].length, 8);
        assert_eq!(
            f.instructions[3].operands[1],
            RawOperand::memory(SizePrefix::DwordPtr, Some("rbp"), None, 1, -4)
        );
        assert_eq!(
            f.instructions[4].operands[0],
            RawOperand::BranchTarget { value: 0x1030 }
        );
        // addresses strictly increase
        let addrs: Vec<u64> = f.instructions.iter().map(|i| i.address).collect();
        let mut sorted = addrs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(addrs, sorted);
    }

    #[test]
    fn intel_memory_forms() {
        let line = "  4010:\t00\tmov    QWORD PTR [rax+rcx*8+0x643],rdx";
        let funcs = parse_textual_disassembly(line).unwrap();
        assert_eq!(
            funcs[0].instructions[0].operands[0],
            RawOperand::memory(SizePrefix::QwordPtr, Some("rax"), Some("rcx"), 8, 0x643)
        );
        let line = "  4010:\t00\tlea    rax,[rip+0x2ef0]";
        let funcs = parse_textual_disassembly(line).unwrap();
        assert_eq!(
            funcs[0].instructions[0].operands[1],
            RawOperand::memory(SizePrefix::None, Some("rip"), None, 1, 0x2ef0)
        );
        let line = "  4010:\t00\tmov    rax,QWORD PTR fs:0x28";
        let funcs = parse_textual_disassembly(line).unwrap();
        assert_eq!(
            funcs[0].instructions[0].operands[1],
            RawOperand::memory(SizePrefix::QwordPtr, None, None, 1, 0x28)
        );
    }

    #[test]
    fn prefixes_are_dropped_from_identity() {
        let line = "  4010:\tf3 c3\trepz ret";
        let funcs = parse_textual_disassembly(line).unwrap();
        assert_eq!(funcs[0].instructions[0].mnemonic, "ret");
        let line = "  4010:\tf0 00\tlock xadd DWORD PTR [rdi],eax";
        let funcs = parse_textual_disassembly(line).unwrap();
        assert_eq!(funcs[0].instructions[0].mnemonic, "xadd");
    }

    #[test]
    fn unknown_register_reports_name_and_line() {
        let line = "  4010:\t00\tmov    qux,rax";
        match parse_textual_disassembly(line) {
            Err(FrontendError::UnknownRegister { line, name }) => {
                assert_eq!(line, 1);
                assert_eq!(name, "qux");
            }
            other => panic!("expected UnknownRegister, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line_number() {
        let text = "  4010:\t00\tret\nnot a line\n";
        match parse_textual_disassembly(text) {
            Err(FrontendError::SyntaxError { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected SyntaxError, got {other:?}"),
        }
    }
}
