//! Encoder: the inverse of [`decode`](super::decode::decode) over the
//! opcode table.

use thiserror::Error;

use super::op::Mnemonic;
use super::opcodes::{entry_for, Format, LINK_REGS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{0} cannot be encoded directly")]
    NoEncoding(&'static str),
    #[error("immediate {imm} out of range for {mnemonic}")]
    ImmRange { mnemonic: &'static str, imm: i64 },
    #[error("register x{reg} not allowed for {mnemonic}")]
    BadRegister { mnemonic: &'static str, reg: u8 },
}

/// Operand bundle; fields mirror [`DecodedOp`](super::op::DecodedOp) so that
/// `decode(encode(x))` reproduces `x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Operands {
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i64,
}

fn fits_signed(v: i64, bits: u32) -> bool {
    let lo = -(1i64 << (bits - 1));
    let hi = (1i64 << (bits - 1)) - 1;
    (lo..=hi).contains(&v)
}

/// Returns the encoded word and its size in bytes.
pub fn encode(mnemonic: Mnemonic, ops: Operands) -> Result<(u32, u8), EncodeError> {
    let name = mnemonic.name();
    let row = entry_for(mnemonic).ok_or(EncodeError::NoEncoding(name))?;
    for reg in [ops.rd, ops.rs1, ops.rs2] {
        if reg > 31 {
            return Err(EncodeError::BadRegister {
                mnemonic: name,
                reg,
            });
        }
    }
    let range = |ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(EncodeError::ImmRange {
                mnemonic: name,
                imm: ops.imm,
            })
        }
    };
    let rd = u32::from(ops.rd) << 7;
    let rs1 = u32::from(ops.rs1) << 15;
    let rs2 = u32::from(ops.rs2) << 20;
    let imm = ops.imm;
    let word = match row.format {
        Format::R | Format::Amo => row.matches | rd | rs1 | rs2,
        Format::I => {
            range(fits_signed(imm, 12))?;
            row.matches | rd | rs1 | ((imm as u32 & 0xfff) << 20)
        }
        Format::Shift64 => {
            range((0..64).contains(&imm))?;
            row.matches | rd | rs1 | ((imm as u32) << 20)
        }
        Format::ShiftW => {
            range((0..32).contains(&imm))?;
            row.matches | rd | rs1 | ((imm as u32) << 20)
        }
        Format::S => {
            range(fits_signed(imm, 12))?;
            let v = imm as u32;
            row.matches | rs1 | rs2 | ((v >> 5) & 0x7f) << 25 | (v & 0x1f) << 7
        }
        Format::B => {
            range(fits_signed(imm, 13) && imm % 2 == 0)?;
            let v = imm as u32;
            row.matches
                | rs1
                | rs2
                | ((v >> 12) & 1) << 31
                | ((v >> 5) & 0x3f) << 25
                | ((v >> 1) & 0xf) << 8
                | ((v >> 11) & 1) << 7
        }
        Format::U => {
            range(fits_signed(imm, 32) && imm & 0xfff == 0)?;
            row.matches | rd | (imm as u32 & 0xffff_f000)
        }
        Format::Lpad => {
            range(fits_signed(imm, 32) && imm & 0xfff == 0)?;
            if ops.rd != 0 {
                return Err(EncodeError::BadRegister {
                    mnemonic: name,
                    reg: ops.rd,
                });
            }
            row.matches | (imm as u32 & 0xffff_f000)
        }
        Format::J => {
            range(fits_signed(imm, 21) && imm % 2 == 0)?;
            let v = imm as u32;
            row.matches
                | rd
                | ((v >> 20) & 1) << 31
                | ((v >> 1) & 0x3ff) << 21
                | ((v >> 11) & 1) << 20
                | ((v >> 12) & 0xff) << 12
        }
        Format::Fence => row.matches | 0x0ff0_0000,
        Format::Bare => row.matches,
        Format::Csr => {
            range((0..4096).contains(&imm))?;
            row.matches | rd | rs1 | ((imm as u32) << 20)
        }
        Format::CsrImm => {
            range((0..4096).contains(&imm))?;
            row.matches | rd | rs1 | ((imm as u32) << 20)
        }
        Format::SsPush => {
            if !LINK_REGS.contains(&ops.rs2) {
                return Err(EncodeError::BadRegister {
                    mnemonic: name,
                    reg: ops.rs2,
                });
            }
            row.matches | rs2
        }
        Format::SsPopChk => {
            if !LINK_REGS.contains(&ops.rs1) {
                return Err(EncodeError::BadRegister {
                    mnemonic: name,
                    reg: ops.rs1,
                });
            }
            row.matches | rs1
        }
        Format::SsRdp => row.matches | rd,
        Format::CFixed => row.matches,
        Format::CI => {
            range(fits_signed(imm, 6))?;
            if ops.rd == 0 {
                return Err(EncodeError::BadRegister {
                    mnemonic: name,
                    reg: 0,
                });
            }
            let v = imm as u32;
            row.matches | ((v >> 5) & 1) << 12 | rd | (v & 0x1f) << 2
        }
        Format::CR => {
            for reg in [ops.rd, ops.rs2] {
                if reg == 0 {
                    return Err(EncodeError::BadRegister {
                        mnemonic: name,
                        reg,
                    });
                }
            }
            row.matches | rd | u32::from(ops.rs2) << 2
        }
        Format::CJr => {
            if ops.rs1 == 0 {
                return Err(EncodeError::BadRegister {
                    mnemonic: name,
                    reg: 0,
                });
            }
            row.matches | u32::from(ops.rs1) << 7
        }
    };
    let size = if mnemonic.name().starts_with("c.") {
        2
    } else {
        4
    };
    Ok((word, size))
}
