//! Decoded instruction representation.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::reg_name;

/// Coarse operation class used for histograms and the timing model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Alu,
    Load,
    Store,
    Branch,
    Jal,
    Jalr,
    Csr,
    System,
    Amo,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Alu,
        OpKind::Load,
        OpKind::Store,
        OpKind::Branch,
        OpKind::Jal,
        OpKind::Jalr,
        OpKind::Csr,
        OpKind::System,
        OpKind::Amo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Alu => "alu",
            OpKind::Load => "load",
            OpKind::Store => "store",
            OpKind::Branch => "branch",
            OpKind::Jal => "jal",
            OpKind::Jalr => "jalr",
            OpKind::Csr => "csr",
            OpKind::System => "system",
            OpKind::Amo => "amo",
        }
    }
}

/// Operation tag separating CFI instructions from the ordinary memory/ALU
/// operations they are mapped onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfiTag {
    None,
    SsPush,
    SsPopChk,
    SsRdp,
    #[serde(rename = "ssamoswap_w")]
    SsAmoSwapW,
    #[serde(rename = "ssamoswap_d")]
    SsAmoSwapD,
    Lpad,
}

impl CfiTag {
    pub const ALL: [CfiTag; 7] = [
        CfiTag::None,
        CfiTag::SsPush,
        CfiTag::SsPopChk,
        CfiTag::SsRdp,
        CfiTag::SsAmoSwapW,
        CfiTag::SsAmoSwapD,
        CfiTag::Lpad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CfiTag::None => "none",
            CfiTag::SsPush => "sspush",
            CfiTag::SsPopChk => "sspopchk",
            CfiTag::SsRdp => "ssrdp",
            CfiTag::SsAmoSwapW => "ssamoswap_w",
            CfiTag::SsAmoSwapD => "ssamoswap_d",
            CfiTag::Lpad => "lpad",
        }
    }

    pub fn is_cfi(self) -> bool {
        self != CfiTag::None
    }

    /// True for the Zicfiss operations that go through the shadow-stack unit gate.
    pub fn is_ss_memory(self) -> bool {
        matches!(
            self,
            CfiTag::SsPush | CfiTag::SsPopChk | CfiTag::SsAmoSwapW | CfiTag::SsAmoSwapD
        )
    }
}

/// Every instruction the decoder understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[allow(missing_docs)]
pub enum Mnemonic {
    Lui,
    Auipc,
    Jal,
    Jalr,
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
    Lb,
    Lh,
    Lw,
    Ld,
    Lbu,
    Lhu,
    Lwu,
    Sb,
    Sh,
    Sw,
    Sd,
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
    Addiw,
    Slliw,
    Srliw,
    Sraiw,
    Addw,
    Subw,
    Sllw,
    Srlw,
    Sraw,
    Fence,
    Ecall,
    Ebreak,
    Csrrw,
    Csrrs,
    Csrrc,
    Csrrwi,
    Csrrsi,
    Csrrci,
    Mul,
    Mulh,
    Mulhsu,
    Mulhu,
    Div,
    Divu,
    Rem,
    Remu,
    Mulw,
    Divw,
    Divuw,
    Remw,
    Remuw,
    Lpad,
    SsPush,
    SsPopChk,
    SsRdp,
    SsAmoSwapW,
    SsAmoSwapD,
    CNop,
    CLi,
    CAddi,
    CMv,
    CAdd,
    CJr,
    CJalr,
    CSsPush,
    CSsPopChk,
    /// May-be-operation fallback of a disabled Zicfiss encoding: writes zero to `rd`.
    Mop,
}

impl Mnemonic {
    pub fn name(self) -> &'static str {
        use Mnemonic::*;
        match self {
            Lui => "lui",
            Auipc => "auipc",
            Jal => "jal",
            Jalr => "jalr",
            Beq => "beq",
            Bne => "bne",
            Blt => "blt",
            Bge => "bge",
            Bltu => "bltu",
            Bgeu => "bgeu",
            Lb => "lb",
            Lh => "lh",
            Lw => "lw",
            Ld => "ld",
            Lbu => "lbu",
            Lhu => "lhu",
            Lwu => "lwu",
            Sb => "sb",
            Sh => "sh",
            Sw => "sw",
            Sd => "sd",
            Addi => "addi",
            Slti => "slti",
            Sltiu => "sltiu",
            Xori => "xori",
            Ori => "ori",
            Andi => "andi",
            Slli => "slli",
            Srli => "srli",
            Srai => "srai",
            Add => "add",
            Sub => "sub",
            Sll => "sll",
            Slt => "slt",
            Sltu => "sltu",
            Xor => "xor",
            Srl => "srl",
            Sra => "sra",
            Or => "or",
            And => "and",
            Addiw => "addiw",
            Slliw => "slliw",
            Srliw => "srliw",
            Sraiw => "sraiw",
            Addw => "addw",
            Subw => "subw",
            Sllw => "sllw",
            Srlw => "srlw",
            Sraw => "sraw",
            Fence => "fence",
            Ecall => "ecall",
            Ebreak => "ebreak",
            Csrrw => "csrrw",
            Csrrs => "csrrs",
            Csrrc => "csrrc",
            Csrrwi => "csrrwi",
            Csrrsi => "csrrsi",
            Csrrci => "csrrci",
            Mul => "mul",
            Mulh => "mulh",
            Mulhsu => "mulhsu",
            Mulhu => "mulhu",
            Div => "div",
            Divu => "divu",
            Rem => "rem",
            Remu => "remu",
            Mulw => "mulw",
            Divw => "divw",
            Divuw => "divuw",
            Remw => "remw",
            Remuw => "remuw",
            Lpad => "lpad",
            SsPush => "sspush",
            SsPopChk => "sspopchk",
            SsRdp => "ssrdp",
            SsAmoSwapW => "ssamoswap.w",
            SsAmoSwapD => "ssamoswap.d",
            CNop => "c.nop",
            CLi => "c.li",
            CAddi => "c.addi",
            CMv => "c.mv",
            CAdd => "c.add",
            CJr => "c.jr",
            CJalr => "c.jalr",
            CSsPush => "c.sspush",
            CSsPopChk => "c.sspopchk",
            Mop => "mop",
        }
    }

    pub fn kind(self) -> OpKind {
        use Mnemonic::*;
        match self {
            Jal => OpKind::Jal,
            Jalr | CJr | CJalr => OpKind::Jalr,
            Beq | Bne | Blt | Bge | Bltu | Bgeu => OpKind::Branch,
            Lb | Lh | Lw | Ld | Lbu | Lhu | Lwu | SsPopChk | CSsPopChk => OpKind::Load,
            Sb | Sh | Sw | Sd | SsPush | CSsPush => OpKind::Store,
            Csrrw | Csrrs | Csrrc | Csrrwi | Csrrsi | Csrrci => OpKind::Csr,
            Fence | Ecall | Ebreak => OpKind::System,
            SsAmoSwapW | SsAmoSwapD => OpKind::Amo,
            _ => OpKind::Alu,
        }
    }

    pub fn cfi_tag(self) -> CfiTag {
        use Mnemonic::*;
        match self {
            Lpad => CfiTag::Lpad,
            SsPush | CSsPush => CfiTag::SsPush,
            SsPopChk | CSsPopChk => CfiTag::SsPopChk,
            SsRdp => CfiTag::SsRdp,
            SsAmoSwapW => CfiTag::SsAmoSwapW,
            SsAmoSwapD => CfiTag::SsAmoSwapD,
            _ => CfiTag::None,
        }
    }
}

/// One decoded instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedOp {
    pub mnemonic: Mnemonic,
    pub kind: OpKind,
    pub cfi_tag: CfiTag,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    /// Sign-extended immediate. For `lui`/`auipc`/`lpad` this is the already
    /// shifted value (`imm20 << 12`); for CSR ops it is the CSR address.
    pub imm: i64,
    pub raw: u32,
    pub size_bytes: u8,
}

impl DecodedOp {
    /// Landing-pad label carried by an `lpad` (the auipc immediate field).
    pub fn lpad_label(&self) -> u32 {
        ((self.imm as u64 >> 12) & 0xf_ffff) as u32
    }

    pub fn is_indirect_jump(&self) -> bool {
        self.kind == OpKind::Jalr
    }

    /// Register written by this instruction, if any (x0 never counts).
    pub fn dest_reg(&self) -> Option<u8> {
        use Mnemonic::*;
        let writes = !matches!(
            self.mnemonic,
            Beq | Bne
                | Blt
                | Bge
                | Bltu
                | Bgeu
                | Sb
                | Sh
                | Sw
                | Sd
                | Fence
                | Ecall
                | Ebreak
                | Lpad
                | SsPush
                | SsPopChk
                | CSsPush
                | CSsPopChk
                | CNop
                | CJr
        );
        (writes && self.rd != 0).then_some(self.rd)
    }
}

impl fmt::Display for DecodedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Mnemonic::*;
        let n = self.mnemonic.name();
        let (rd, rs1, rs2) = (reg_name(self.rd), reg_name(self.rs1), reg_name(self.rs2));
        match self.mnemonic {
            Lui | Auipc => write!(f, "{n} {rd}, {:#x}", (self.imm as u64 >> 12) & 0xf_ffff),
            Lpad => write!(f, "{n} {:#x}", self.lpad_label()),
            Jal => write!(f, "{n} {rd}, {}", self.imm),
            Jalr | Lb | Lh | Lw | Ld | Lbu | Lhu | Lwu => {
                write!(f, "{n} {rd}, {}({rs1})", self.imm)
            }
            Beq | Bne | Blt | Bge | Bltu | Bgeu => write!(f, "{n} {rs1}, {rs2}, {}", self.imm),
            Sb | Sh | Sw | Sd => write!(f, "{n} {rs2}, {}({rs1})", self.imm),
            Addi | Slti | Sltiu | Xori | Ori | Andi | Slli | Srli | Srai | Addiw | Slliw
            | Srliw | Sraiw => write!(f, "{n} {rd}, {rs1}, {}", self.imm),
            Fence | Ecall | Ebreak | CNop => write!(f, "{n}"),
            Csrrw | Csrrs | Csrrc => write!(f, "{n} {rd}, {:#x}, {rs1}", self.imm),
            Csrrwi | Csrrsi | Csrrci => write!(f, "{n} {rd}, {:#x}, {}", self.imm, self.rs1),
            SsPush | CSsPush => write!(f, "{n} {rs2}"),
            SsPopChk | CSsPopChk => write!(f, "{n} {rs1}"),
            SsRdp | Mop => write!(f, "{n} {rd}"),
            SsAmoSwapW | SsAmoSwapD => write!(f, "{n} {rd}, {rs2}, ({rs1})"),
            CLi | CAddi => write!(f, "{n} {rd}, {}", self.imm),
            CMv | CAdd => write!(f, "{n} {rd}, {rs2}"),
            CJr | CJalr => write!(f, "{n} {rs1}"),
            _ => write!(f, "{n} {rd}, {rs1}, {rs2}"),
        }
    }
}
