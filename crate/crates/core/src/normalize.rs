//! Instruction normalization. Registers collapse into class tokens,
//! large displacements and immediates into `disp`/`immval`, branch targets
//! into a single token, so that semantically similar instructions share one
//! vocabulary entry. Every frequency statistic downstream counts these
//! tokens, never raw instruction text.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{canonical_mnemonic, MemOperand, RawInstruction, RawOperand};

const REGISTER_CLASSES: &str = include_str!("../data/register_classes.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    /// Displacements with 0 < |d| < bound keep their literal decimal value;
    /// anything at or above the bound becomes the `disp` token. 0 means
    /// "never keep literals".
    pub disp_literal_bound: u64,
    /// Same policy for immediates, with `immval` as the class token.
    pub imm_literal_bound: u64,
    /// Token substituted for every direct branch or call target.
    pub branch_target_token: String,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            disp_literal_bound: 16,
            imm_literal_bound: 16,
            branch_target_token: "target".to_string(),
        }
    }
}

/// One normalized instruction: the full underscore-joined token plus its
/// components, kept so downstream stages can recover the mnemonic without
/// re-splitting (mnemonics themselves may contain underscores).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedInstruction {
    pub token: String,
    pub mnemonic: String,
    pub operand_tokens: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
}

fn register_map() -> &'static HashMap<&'static str, &'static str> {
    static MAP: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    MAP.get_or_init(|| {
        let mut map = HashMap::new();
        for line in REGISTER_CLASSES.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            if let (Some(name), Some(token)) = (parts.next(), parts.next()) {
                map.insert(name, token);
            }
        }
        map
    })
}

/// Whether `name` is a recognized x86-64 architectural register.
pub fn is_register(name: &str) -> bool {
    register_map().contains_key(name)
}

/// All recognized register names, for exhaustive property checks.
pub fn known_registers() -> impl Iterator<Item = &'static str> {
    register_map().keys().copied()
}

/// Class token for a register name per the fixed class table:
/// general-purpose registers collapse to `reg1`/`reg2`/`reg4`/`reg8`,
/// stack/base/instruction pointers keep width-tagged tokens (`sp8`, `bp4`,
/// `ip8`, ...), vector registers collapse to `regxmm`/`regymm`/`regzmm`,
/// and opmask/segment registers keep their literal names.
pub fn normalize_register(name: &str) -> Result<&'static str, NormalizeError> {
    register_map()
        .get(name)
        .copied()
        .ok_or_else(|| NormalizeError::UnknownRegister(name.to_string()))
}

/// Token for one operand under `cfg`.
pub fn normalize_operand(
    op: &RawOperand,
    cfg: &NormalizationConfig,
) -> Result<String, NormalizeError> {
    match op {
        RawOperand::Register { name } => Ok(normalize_register(name)?.to_string()),
        RawOperand::Immediate { value } => Ok(immediate_token(*value, cfg.imm_literal_bound)),
        RawOperand::Memory(mem) => memory_token(mem, cfg),
        RawOperand::BranchTarget { .. } => Ok(cfg.branch_target_token.clone()),
        RawOperand::Other { .. } => Ok("other".to_string()),
    }
}

fn immediate_token(value: i64, bound: u64) -> String {
    if value.unsigned_abs() < bound {
        value.to_string()
    } else {
        "immval".to_string()
    }
}

fn memory_token(mem: &MemOperand, cfg: &NormalizationConfig) -> Result<String, NormalizeError> {
    let mut inner = String::new();
    if let Some(base) = &mem.base {
        inner.push_str(normalize_register(base)?);
    }
    if let Some(index) = &mem.index {
        if !inner.is_empty() {
            inner.push('+');
        }
        inner.push_str(normalize_register(index)?);
        inner.push('*');
        inner.push_str(&mem.scale.to_string());
    }
    let disp = mem.displacement;
    if disp != 0 {
        if disp.unsigned_abs() < cfg.disp_literal_bound {
            // Negative literals absorb the joiner into their sign.
            if inner.is_empty() || disp < 0 {
                inner.push_str(&disp.to_string());
            } else {
                inner.push('+');
                inner.push_str(&disp.to_string());
            }
        } else {
            if !inner.is_empty() {
                inner.push('+');
            }
            inner.push_str("disp");
        }
    } else if inner.is_empty() {
        // Unreachable for well-formed operands (base, index, or nonzero
        // displacement is required), but keep the token non-empty.
        inner.push('0');
    }
    Ok(format!("{}[{}]", mem.size_prefix.token(), inner))
}

/// Full normalization of one instruction: canonical mnemonic joined with
/// operand tokens by `_`, in operand order. Pure function of `(ins, cfg)`.
pub fn normalize_instruction(
    ins: &RawInstruction,
    cfg: &NormalizationConfig,
) -> Result<NormalizedInstruction, NormalizeError> {
    let mnemonic = canonical_mnemonic(&ins.mnemonic);
    let operand_tokens = ins
        .operands
        .iter()
        .map(|op| normalize_operand(op, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut token = mnemonic.clone();
    for op in &operand_tokens {
        token.push('_');
        token.push_str(op);
    }
    Ok(NormalizedInstruction {
        token,
        mnemonic,
        operand_tokens,
    })
}
