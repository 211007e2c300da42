//! Table-driven decoder for the RV64IM subset, the supported compressed
//! forms, and the Zicfiss/Zicfilp encodings.

use thiserror::Error;

use super::op::{CfiTag, DecodedOp, Mnemonic};
use super::opcodes::{Format, OpcodeEntry, LINK_REGS, OPCODES16, OPCODES32};

/// Effective CFI enables for the privilege level an instruction executes at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CfiEnables {
    pub ss: bool,
    pub lp: bool,
}

impl CfiEnables {
    pub const ALL: CfiEnables = CfiEnables { ss: true, lp: true };
    pub const NONE: CfiEnables = CfiEnables {
        ss: false,
        lp: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal instruction {raw:#010x}")]
pub struct DecodeError {
    pub raw: u32,
}

/// Instruction length implied by the low bits of the first parcel.
pub fn instruction_len(first_parcel: u16) -> u8 {
    if first_parcel & 0b11 == 0b11 {
        4
    } else {
        2
    }
}

fn sext(value: u64, bits: u32) -> i64 {
    let shift = 64 - bits;
    ((value << shift) as i64) >> shift
}

fn rd(raw: u32) -> u8 {
    ((raw >> 7) & 0x1f) as u8
}
fn rs1(raw: u32) -> u8 {
    ((raw >> 15) & 0x1f) as u8
}
fn rs2(raw: u32) -> u8 {
    ((raw >> 20) & 0x1f) as u8
}

pub(crate) fn imm_i(raw: u32) -> i64 {
    sext(u64::from(raw >> 20), 12)
}

pub(crate) fn imm_s(raw: u32) -> i64 {
    sext(u64::from(((raw >> 25) << 5) | ((raw >> 7) & 0x1f)), 12)
}

pub(crate) fn imm_b(raw: u32) -> i64 {
    let v = ((raw >> 31) & 1) << 12
        | ((raw >> 7) & 1) << 11
        | ((raw >> 25) & 0x3f) << 5
        | ((raw >> 8) & 0xf) << 1;
    sext(u64::from(v), 13)
}

pub(crate) fn imm_u(raw: u32) -> i64 {
    i64::from((raw & 0xffff_f000) as i32)
}

pub(crate) fn imm_j(raw: u32) -> i64 {
    let v = ((raw >> 31) & 1) << 20
        | ((raw >> 12) & 0xff) << 12
        | ((raw >> 20) & 1) << 11
        | ((raw >> 21) & 0x3ff) << 1;
    sext(u64::from(v), 21)
}

fn imm_ci(raw: u16) -> i64 {
    let v = ((raw >> 12) & 1) << 5 | ((raw >> 2) & 0x1f);
    sext(u64::from(v), 6)
}

fn operands_ok(row: &OpcodeEntry, op: &DecodedOp) -> bool {
    match row.mnemonic {
        Mnemonic::SsPush => LINK_REGS.contains(&op.rs2),
        Mnemonic::SsPopChk => LINK_REGS.contains(&op.rs1),
        Mnemonic::CLi | Mnemonic::CAddi => op.rd != 0,
        Mnemonic::CMv | Mnemonic::CAdd => op.rd != 0 && op.rs2 != 0,
        Mnemonic::CJr | Mnemonic::CJalr => op.rs1 != 0,
        _ => true,
    }
}

fn fill(row: &OpcodeEntry, raw: u32) -> DecodedOp {
    let mut op = DecodedOp {
        mnemonic: row.mnemonic,
        kind: row.mnemonic.kind(),
        cfi_tag: row.mnemonic.cfi_tag(),
        rd: 0,
        rs1: 0,
        rs2: 0,
        imm: 0,
        raw,
        size_bytes: 4,
    };
    match row.format {
        Format::R | Format::Amo => {
            op.rd = rd(raw);
            op.rs1 = rs1(raw);
            op.rs2 = rs2(raw);
        }
        Format::I => {
            op.rd = rd(raw);
            op.rs1 = rs1(raw);
            op.imm = imm_i(raw);
        }
        Format::Shift64 => {
            op.rd = rd(raw);
            op.rs1 = rs1(raw);
            op.imm = i64::from((raw >> 20) & 0x3f);
        }
        Format::ShiftW => {
            op.rd = rd(raw);
            op.rs1 = rs1(raw);
            op.imm = i64::from((raw >> 20) & 0x1f);
        }
        Format::S => {
            op.rs1 = rs1(raw);
            op.rs2 = rs2(raw);
            op.imm = imm_s(raw);
        }
        Format::B => {
            op.rs1 = rs1(raw);
            op.rs2 = rs2(raw);
            op.imm = imm_b(raw);
        }
        Format::U | Format::Lpad => {
            op.rd = rd(raw);
            op.imm = imm_u(raw);
        }
        Format::J => {
            op.rd = rd(raw);
            op.imm = imm_j(raw);
        }
        Format::Fence | Format::Bare => {}
        Format::Csr | Format::CsrImm => {
            op.rd = rd(raw);
            op.rs1 = rs1(raw);
            op.imm = i64::from(raw >> 20);
        }
        Format::SsPush => op.rs2 = rs2(raw),
        Format::SsPopChk => op.rs1 = rs1(raw),
        Format::SsRdp => op.rd = rd(raw),
        Format::CFixed => {
            op.size_bytes = 2;
            match row.mnemonic {
                Mnemonic::CSsPush => op.rs2 = 1,
                Mnemonic::CSsPopChk => op.rs1 = 5,
                _ => {}
            }
        }
        Format::CI => {
            op.size_bytes = 2;
            op.rd = rd(raw);
            op.rs1 = op.rd;
            op.imm = imm_ci(raw as u16);
        }
        Format::CR => {
            op.size_bytes = 2;
            op.rd = rd(raw);
            op.rs2 = ((raw >> 2) & 0x1f) as u8;
            if row.mnemonic == Mnemonic::CAdd {
                op.rs1 = op.rd;
            }
        }
        Format::CJr => {
            op.size_bytes = 2;
            op.rs1 = rd(raw);
            if row.mnemonic == Mnemonic::CJalr {
                op.rd = 1;
            }
        }
    }
    op
}

/// Rewrites a CFI op into the behavior its encoding has when the owning
/// extension is inactive: `lpad` becomes `auipc x0`, the Zimop-space
/// shadow-stack ops become may-be-ops that write zero to `rd`.
/// `ssamoswap` has no fallback and stays illegal.
fn apply_enables(mut op: DecodedOp, enables: CfiEnables) -> Result<DecodedOp, DecodeError> {
    match op.cfi_tag {
        CfiTag::Lpad if !enables.lp => {
            op.mnemonic = Mnemonic::Auipc;
        }
        CfiTag::SsPush | CfiTag::SsPopChk | CfiTag::SsRdp if !enables.ss => {
            op.mnemonic = Mnemonic::Mop;
            op.rs1 = 0;
            op.rs2 = 0;
        }
        CfiTag::SsAmoSwapW | CfiTag::SsAmoSwapD if !enables.ss => {
            return Err(DecodeError { raw: op.raw });
        }
        _ => return Ok(op),
    }
    op.kind = op.mnemonic.kind();
    op.cfi_tag = CfiTag::None;
    Ok(op)
}

/// Decodes one instruction. `raw` holds the 32-bit word at the fetch address;
/// when its low two bits are not `11` only the low 16 bits are used.
pub fn decode(raw: u32, enables: CfiEnables) -> Result<DecodedOp, DecodeError> {
    let (table, word) = if instruction_len(raw as u16) == 4 {
        (OPCODES32, raw)
    } else {
        (OPCODES16, raw & 0xffff)
    };
    let op = table
        .iter()
        .filter(|row| word & row.mask == row.matches)
        .map(|row| (row, fill(row, word)))
        .find(|(row, op)| operands_ok(row, op))
        .map(|(_, op)| op)
        .ok_or(DecodeError { raw: word })?;
    apply_enables(op, enables)
}
