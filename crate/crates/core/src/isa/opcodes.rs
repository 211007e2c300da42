//! Opcode table: mask/match pairs in the layout of the riscv-opcodes listing.
//!
//! This is the single source of encodings for both the decoder and the
//! assembler. CFI rows follow the ratified Zicfiss/Zicfilp assignments:
//! `lpad` is `auipc x0, label`, `sspush`/`sspopchk`/`ssrdp` live in the Zimop
//! space (`mop.rr.7`, `mop.r.28`), `ssamoswap.{w,d}` reuse the AMO major opcode
//! with funct5 `01001`, and the compressed forms are `c.mop.1` / `c.mop.5`.

use super::op::Mnemonic;

/// Operand layout of an encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    R,
    I,
    /// I-type shift with a 6-bit shamt.
    Shift64,
    /// I-type shift with a 5-bit shamt (`*w` forms).
    ShiftW,
    S,
    B,
    U,
    J,
    Fence,
    /// No operands (`ecall`, `ebreak`).
    Bare,
    Csr,
    CsrImm,
    Amo,
    Lpad,
    SsPush,
    SsPopChk,
    SsRdp,
    /// Fixed 16-bit encoding (`c.nop`, `c.sspush x1`, `c.sspopchk x5`).
    CFixed,
    /// `c.li` / `c.addi`: rd plus 6-bit signed immediate.
    CI,
    /// `c.mv` / `c.add`: rd plus rs2.
    CR,
    /// `c.jr` / `c.jalr`: rs1 only.
    CJr,
}

#[derive(Debug, Clone, Copy)]
pub struct OpcodeEntry {
    pub mnemonic: Mnemonic,
    pub mask: u32,
    pub matches: u32,
    pub format: Format,
}

const fn e(mnemonic: Mnemonic, mask: u32, matches: u32, format: Format) -> OpcodeEntry {
    OpcodeEntry {
        mnemonic,
        mask,
        matches,
        format,
    }
}

const M_OPC: u32 = 0x0000_007f;
const M_F3: u32 = 0x0000_707f;
const M_R: u32 = 0xfe00_707f;
const M_SH64: u32 = 0xfc00_707f;
const M_ALL: u32 = 0xffff_ffff;

use Format::*;
use Mnemonic as Mn;

/// 32-bit encodings. Ordering matters where patterns overlap: more specific
/// rows come first (`lpad` before `auipc`).
pub static OPCODES32: &[OpcodeEntry] = &[
    e(Mn::Lpad, 0x0000_0fff, 0x0000_0017, Lpad),
    e(Mn::Lui, M_OPC, 0x0000_0037, U),
    e(Mn::Auipc, M_OPC, 0x0000_0017, U),
    e(Mn::Jal, M_OPC, 0x0000_006f, J),
    e(Mn::Jalr, M_F3, 0x0000_0067, I),
    e(Mn::Beq, M_F3, 0x0000_0063, B),
    e(Mn::Bne, M_F3, 0x0000_1063, B),
    e(Mn::Blt, M_F3, 0x0000_4063, B),
    e(Mn::Bge, M_F3, 0x0000_5063, B),
    e(Mn::Bltu, M_F3, 0x0000_6063, B),
    e(Mn::Bgeu, M_F3, 0x0000_7063, B),
    e(Mn::Lb, M_F3, 0x0000_0003, I),
    e(Mn::Lh, M_F3, 0x0000_1003, I),
    e(Mn::Lw, M_F3, 0x0000_2003, I),
    e(Mn::Ld, M_F3, 0x0000_3003, I),
    e(Mn::Lbu, M_F3, 0x0000_4003, I),
    e(Mn::Lhu, M_F3, 0x0000_5003, I),
    e(Mn::Lwu, M_F3, 0x0000_6003, I),
    e(Mn::Sb, M_F3, 0x0000_0023, S),
    e(Mn::Sh, M_F3, 0x0000_1023, S),
    e(Mn::Sw, M_F3, 0x0000_2023, S),
    e(Mn::Sd, M_F3, 0x0000_3023, S),
    e(Mn::Addi, M_F3, 0x0000_0013, I),
    e(Mn::Slti, M_F3, 0x0000_2013, I),
    e(Mn::Sltiu, M_F3, 0x0000_3013, I),
    e(Mn::Xori, M_F3, 0x0000_4013, I),
    e(Mn::Ori, M_F3, 0x0000_6013, I),
    e(Mn::Andi, M_F3, 0x0000_7013, I),
    e(Mn::Slli, M_SH64, 0x0000_1013, Shift64),
    e(Mn::Srli, M_SH64, 0x0000_5013, Shift64),
    e(Mn::Srai, M_SH64, 0x4000_5013, Shift64),
    e(Mn::Add, M_R, 0x0000_0033, R),
    e(Mn::Sub, M_R, 0x4000_0033, R),
    e(Mn::Sll, M_R, 0x0000_1033, R),
    e(Mn::Slt, M_R, 0x0000_2033, R),
    e(Mn::Sltu, M_R, 0x0000_3033, R),
    e(Mn::Xor, M_R, 0x0000_4033, R),
    e(Mn::Srl, M_R, 0x0000_5033, R),
    e(Mn::Sra, M_R, 0x4000_5033, R),
    e(Mn::Or, M_R, 0x0000_6033, R),
    e(Mn::And, M_R, 0x0000_7033, R),
    e(Mn::Mul, M_R, 0x0200_0033, R),
    e(Mn::Mulh, M_R, 0x0200_1033, R),
    e(Mn::Mulhsu, M_R, 0x0200_2033, R),
    e(Mn::Mulhu, M_R, 0x0200_3033, R),
    e(Mn::Div, M_R, 0x0200_4033, R),
    e(Mn::Divu, M_R, 0x0200_5033, R),
    e(Mn::Rem, M_R, 0x0200_6033, R),
    e(Mn::Remu, M_R, 0x0200_7033, R),
    e(Mn::Addiw, M_F3, 0x0000_001b, I),
    e(Mn::Slliw, M_R, 0x0000_101b, ShiftW),
    e(Mn::Srliw, M_R, 0x0000_501b, ShiftW),
    e(Mn::Sraiw, M_R, 0x4000_501b, ShiftW),
    e(Mn::Addw, M_R, 0x0000_003b, R),
    e(Mn::Subw, M_R, 0x4000_003b, R),
    e(Mn::Sllw, M_R, 0x0000_103b, R),
    e(Mn::Srlw, M_R, 0x0000_503b, R),
    e(Mn::Sraw, M_R, 0x4000_503b, R),
    e(Mn::Mulw, M_R, 0x0200_003b, R),
    e(Mn::Divw, M_R, 0x0200_403b, R),
    e(Mn::Divuw, M_R, 0x0200_503b, R),
    e(Mn::Remw, M_R, 0x0200_603b, R),
    e(Mn::Remuw, M_R, 0x0200_703b, R),
    e(Mn::Fence, M_F3, 0x0000_000f, Fence),
    e(Mn::Ecall, M_ALL, 0x0000_0073, Bare),
    e(Mn::Ebreak, M_ALL, 0x0010_0073, Bare),
    e(Mn::Csrrw, M_F3, 0x0000_1073, Csr),
    e(Mn::Csrrs, M_F3, 0x0000_2073, Csr),
    e(Mn::Csrrc, M_F3, 0x0000_3073, Csr),
    e(Mn::Csrrwi, M_F3, 0x0000_5073, CsrImm),
    e(Mn::Csrrsi, M_F3, 0x0000_6073, CsrImm),
    e(Mn::Csrrci, M_F3, 0x0000_7073, CsrImm),
    // mop.rr.7 with rd=x0, rs1=x0; rs2 is the link register.
    e(Mn::SsPush, 0xfe0f_ffff, 0xce00_4073, SsPush),
    // mop.r.28 with rd=x0; rs1 is the link register.
    e(Mn::SsPopChk, 0xfff0_7fff, 0xcdc0_4073, SsPopChk),
    // mop.r.28 with rs1=x0.
    e(Mn::SsRdp, 0xffff_f07f, 0xcdc0_4073, SsRdp),
    e(Mn::SsAmoSwapW, 0xf800_707f, 0x4800_202f, Amo),
    e(Mn::SsAmoSwapD, 0xf800_707f, 0x4800_302f, Amo),
];

/// 16-bit encodings (upper half of the word is ignored).
pub static OPCODES16: &[OpcodeEntry] = &[
    e(Mn::CNop, 0xffff, 0x0001, CFixed),
    // c.mop.1 / c.mop.5
    e(Mn::CSsPush, 0xffff, 0x6081, CFixed),
    e(Mn::CSsPopChk, 0xffff, 0x6281, CFixed),
    e(Mn::CAddi, 0xe003, 0x0001, CI),
    e(Mn::CLi, 0xe003, 0x4001, CI),
    e(Mn::CJr, 0xf07f, 0x8002, CJr),
    e(Mn::CMv, 0xf003, 0x8002, CR),
    e(Mn::CJalr, 0xf07f, 0x9002, CJr),
    e(Mn::CAdd, 0xf003, 0x9002, CR),
];

/// Looks up the table row for a mnemonic.
pub fn entry_for(mnemonic: Mnemonic) -> Option<&'static OpcodeEntry> {
    OPCODES32
        .iter()
        .chain(OPCODES16.iter())
        .find(|row| row.mnemonic == mnemonic)
}

/// Link registers accepted by `sspush` / `sspopchk`.
pub const LINK_REGS: [u8; 2] = [1, 5];
