//! Two-pass mini-assembler for test and benchmark programs.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! [label:]... [mnemonic operand, operand, ...] [# comment]
//! ```
//!
//! * Registers: `x0`..`x31` or ABI names (`ra`, `sp`, `t0`, `a0`, `fp`, ...).
//! * Immediates: decimal, `0x`, `0b`, `0o`, optionally negative, or a
//!   `.equ` constant. Memory operands are `imm(reg)`.
//! * Branch and jump targets: a label (optionally `label+N`), or a numeric
//!   byte offset relative to the instruction.
//! * Directives: `.text`, `.data`, `.globl`, `.align`/`.p2align` (power of
//!   two), `.balign` (bytes), `.byte`/`.half`/`.word`/`.dword` (numbers or
//!   labels), `.zero`/`.space`, `.ascii`, `.string`/`.asciz`, `.equ name, value`.
//! * Pseudo-instructions: `nop li la mv not neg negw sext.w seqz snez j jr
//!   ret call tail beqz bnez blez bgez bltz bgtz bgt ble bgtu bleu csrr csrw
//!   csrs csrc csrwi csrsi csrci`, plus the one-operand forms of `jal`/`jalr`.
//! * CFI: `lpad LABEL`, `sspush ra|t0`, `sspopchk ra|t0`, `ssrdp rd`,
//!   `ssamoswap.w|d rd, rs2, (rs1)`, `c.sspush [ra]`, `c.sspopchk [t0]`.
//! * Compressed: `c.nop c.li c.addi c.mv c.add c.jr c.jalr`.
//!
//! `.text` starts at the base address passed in; `.data` starts at the first
//! page boundary after the text.

use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

use super::{LoadedProgram, Segment, SegmentFlags};
use crate::isa::encode::{encode, Operands};
use crate::isa::hart::csr_addr;
use crate::isa::op::Mnemonic;
use crate::isa::opcodes::{entry_for, Format, OPCODES16, OPCODES32};
use crate::isa::parse_reg;
use crate::memory::PAGE_SIZE;

pub const DEFAULT_TEXT_BASE: u64 = 0x1_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub text_base: u64,
    pub text: Vec<u8>,
    pub data_base: u64,
    pub data: Vec<u8>,
    pub symbols: BTreeMap<String, u64>,
    pub entry: u64,
}

impl Assembly {
    pub fn into_program(self) -> LoadedProgram {
        let mut segments = Vec::new();
        let text_end = self.text_base + self.text.len() as u64;
        if !self.text.is_empty() {
            segments.push(Segment {
                vaddr: self.text_base,
                bytes: self.text,
                flags: SegmentFlags::RX,
            });
        }
        if !self.data.is_empty() {
            segments.push(Segment {
                vaddr: self.data_base,
                bytes: self.data,
                flags: SegmentFlags::RW,
            });
        }
        LoadedProgram {
            entry: self.entry,
            segments,
            symbols: self.symbols,
            text_ranges: std::iter::once(self.text_base..text_end).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

#[derive(Debug, Clone)]
enum Stmt {
    Instr { mnemonic: String, args: Vec<String> },
    Bytes(Vec<u8>),
    Values { width: u8, exprs: Vec<String> },
    Zero(u64),
}

#[derive(Debug, Clone)]
struct Item {
    line: usize,
    section: Section,
    offset: u64,
    size: u64,
    stmt: Stmt,
}

fn err(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError {
        line,
        msg: msg.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut prev = '\0';
    for (i, c) in line.char_indices() {
        match c {
            '"' if prev != '\\' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            '/' if !in_str && prev == '/' => return &line[..i - 1],
            _ => {}
        }
        prev = c;
    }
    line
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
}

pub(crate) fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let body = body.replace('_', "");
    let value = if let Some(h) = body.strip_prefix("0x").or(body.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()?
    } else if let Some(b) = body.strip_prefix("0b") {
        u64::from_str_radix(b, 2).ok()?
    } else if let Some(o) = body.strip_prefix("0o") {
        u64::from_str_radix(o, 8).ok()?
    } else if body.len() == 3 && body.starts_with('\'') && body.ends_with('\'') {
        u64::from(body.as_bytes()[1])
    } else {
        body.parse::<u64>().ok()?
    };
    let value = value as i64;
    Some(if neg { value.wrapping_neg() } else { value })
}

fn split_args(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(|a| a.trim().to_string()).collect()
}

fn parse_string(s: &str, line: usize) -> Result<Vec<u8>, AsmError> {
    let s = s.trim();
    let inner = s
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| err(line, format!("expected quoted string, got `{s}`")))?;
    let mut out = Vec::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        let esc = chars.next().ok_or_else(|| err(line, "dangling escape"))?;
        out.push(match esc {
            'n' => b'\n',
            't' => b'\t',
            'r' => b'\r',
            '0' => 0,
            '\\' => b'\\',
            '"' => b'"',
            other => return Err(err(line, format!("unknown escape \\{other}"))),
        });
    }
    Ok(out)
}

fn csr_by_name(name: &str) -> Option<u16> {
    Some(match name {
        "ssp" => csr_addr::SSP,
        "senvcfg" => csr_addr::SENVCFG,
        "satp" => csr_addr::SATP,
        "menvcfg" => csr_addr::MENVCFG,
        "mepc" => csr_addr::MEPC,
        "mcause" => csr_addr::MCAUSE,
        "mtval" => csr_addr::MTVAL,
        "henvcfg" => csr_addr::HENVCFG,
        "cycle" => csr_addr::CYCLE,
        "instret" => csr_addr::INSTRET,
        _ => return None,
    })
}

fn mnemonic_table() -> HashMap<&'static str, Mnemonic> {
    OPCODES32
        .iter()
        .chain(OPCODES16)
        .map(|row| (row.mnemonic.name(), row.mnemonic))
        .collect()
}

fn sext32(v: i64) -> i64 {
    i64::from(v as i32)
}

fn sext12(v: i64) -> i64 {
    (v << 52) >> 52
}

/// Instruction sequence loading `value` into `rd`.
pub(crate) fn li_sequence(rd: u8, value: i64) -> Vec<(Mnemonic, Operands)> {
    let mut out = Vec::new();
    li_into(rd, value, &mut out);
    out
}

fn li_into(rd: u8, value: i64, out: &mut Vec<(Mnemonic, Operands)>) {
    if i64::from(value as i32) == value {
        let lo = sext12(value);
        let hi = value.wrapping_sub(lo);
        if hi != 0 {
            out.push((
                Mnemonic::Lui,
                Operands {
                    rd,
                    imm: sext32(hi),
                    ..Default::default()
                },
            ));
            if lo != 0 {
                out.push((
                    Mnemonic::Addiw,
                    Operands {
                        rd,
                        rs1: rd,
                        imm: lo,
                        ..Default::default()
                    },
                ));
            }
        } else {
            out.push((
                Mnemonic::Addi,
                Operands {
                    rd,
                    rs1: 0,
                    imm: lo,
                    ..Default::default()
                },
            ));
        }
        return;
    }
    let lo = sext12(value);
    let mut hi = value.wrapping_sub(lo) >> 12;
    let extra = hi.trailing_zeros();
    hi >>= extra;
    li_into(rd, hi, out);
    out.push((
        Mnemonic::Slli,
        Operands {
            rd,
            rs1: rd,
            imm: i64::from(12 + extra),
            ..Default::default()
        },
    ));
    if lo != 0 {
        out.push((
            Mnemonic::Addi,
            Operands {
                rd,
                rs1: rd,
                imm: lo,
                ..Default::default()
            },
        ));
    }
}

struct Ctx<'a> {
    /// `None` during the sizing pass: labels resolve to the current pc.
    symbols: Option<&'a BTreeMap<String, u64>>,
    consts: &'a HashMap<String, i64>,
    mnemonics: &'a HashMap<&'static str, Mnemonic>,
    pc: u64,
}

impl Ctx<'_> {
    fn constant(&self, s: &str) -> Result<i64, String> {
        parse_int(s)
            .or_else(|| self.consts.get(s.trim()).copied())
            .ok_or_else(|| format!("expected constant, got `{s}`"))
    }

    fn address(&self, s: &str) -> Result<i64, String> {
        let s = s.trim();
        if let Some(v) = parse_int(s).or_else(|| self.consts.get(s).copied()) {
            return Ok(v);
        }
        let (name, off) = match s.find(['+', '-']) {
            Some(i) if i > 0 => (
                s[..i].trim(),
                parse_int(&s[i..]).ok_or_else(|| format!("bad offset in `{s}`"))?,
            ),
            _ => (s, 0),
        };
        if !is_ident(name) {
            return Err(format!("expected label, got `{s}`"));
        }
        match self.symbols {
            None => Ok(self.pc as i64),
            Some(syms) => syms
                .get(name)
                .map(|v| (*v as i64).wrapping_add(off))
                .ok_or_else(|| format!("undefined label `{name}`")),
        }
    }

    /// Pc-relative offset to a branch/jump target.
    fn target(&self, s: &str) -> Result<i64, String> {
        if let Some(v) = parse_int(s) {
            return Ok(v);
        }
        Ok(self.address(s)?.wrapping_sub(self.pc as i64))
    }
}

fn reg(s: &str) -> Result<u8, String> {
    parse_reg(s).ok_or_else(|| format!("expected register, got `{s}`"))
}

fn mem_operand(ctx: &Ctx, s: &str) -> Result<(i64, u8), String> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| format!("expected imm(reg), got `{s}`"))?;
    let close = s
        .rfind(')')
        .ok_or_else(|| format!("expected imm(reg), got `{s}`"))?;
    let base = reg(&s[open + 1..close])?;
    let imm_s = s[..open].trim();
    let imm = if imm_s.is_empty() {
        0
    } else {
        ctx.constant(imm_s)?
    };
    Ok((imm, base))
}

fn want(args: &[String], n: usize, mnemonic: &str) -> Result<(), String> {
    if args.len() == n {
        Ok(())
    } else {
        Err(format!(
            "`{mnemonic}` takes {n} operand(s), got {}",
            args.len()
        ))
    }
}

fn csr_operand(ctx: &Ctx, s: &str) -> Result<i64, String> {
    match csr_by_name(s.trim()) {
        Some(a) => Ok(i64::from(a)),
        None => ctx.constant(s),
    }
}

type Seq = Vec<(Mnemonic, Operands)>;

fn one(m: Mnemonic, rd: u8, rs1: u8, rs2: u8, imm: i64) -> Seq {
    vec![(m, Operands { rd, rs1, rs2, imm })]
}

fn expand_pseudo(ctx: &Ctx, name: &str, a: &[String]) -> Result<Option<Seq>, String> {
    use Mnemonic::*;
    let seq = match name {
        "nop" => {
            want(a, 0, name)?;
            one(Addi, 0, 0, 0, 0)
        }
        "li" => {
            want(a, 2, name)?;
            li_sequence(reg(&a[0])?, ctx.constant(&a[1])?)
        }
        "la" => {
            want(a, 2, name)?;
            let rd = reg(&a[0])?;
            let off = ctx.address(&a[1])?.wrapping_sub(ctx.pc as i64);
            let lo = sext12(off);
            let hi = off.wrapping_sub(lo);
            if i64::from(hi as i32) != hi {
                return Err(format!("`{}` out of auipc range", a[1]));
            }
            let mut s = one(Auipc, rd, 0, 0, hi);
            s.push((
                Addi,
                Operands {
                    rd,
                    rs1: rd,
                    rs2: 0,
                    imm: lo,
                },
            ));
            s
        }
        "mv" => {
            want(a, 2, name)?;
            one(Addi, reg(&a[0])?, reg(&a[1])?, 0, 0)
        }
        "not" => {
            want(a, 2, name)?;
            one(Xori, reg(&a[0])?, reg(&a[1])?, 0, -1)
        }
        "neg" | "negw" => {
            want(a, 2, name)?;
            let m = if name == "neg" { Sub } else { Subw };
            one(m, reg(&a[0])?, 0, reg(&a[1])?, 0)
        }
        "sext.w" => {
            want(a, 2, name)?;
            one(Addiw, reg(&a[0])?, reg(&a[1])?, 0, 0)
        }
        "seqz" => {
            want(a, 2, name)?;
            one(Sltiu, reg(&a[0])?, reg(&a[1])?, 0, 1)
        }
        "snez" => {
            want(a, 2, name)?;
            one(Sltu, reg(&a[0])?, 0, reg(&a[1])?, 0)
        }
        "j" | "tail" => {
            want(a, 1, name)?;
            one(Jal, 0, 0, 0, ctx.target(&a[0])?)
        }
        "call" => {
            want(a, 1, name)?;
            one(Jal, 1, 0, 0, ctx.target(&a[0])?)
        }
        "jal" if a.len() == 1 => one(Jal, 1, 0, 0, ctx.target(&a[0])?),
        "jr" => {
            want(a, 1, name)?;
            one(Jalr, 0, reg(&a[0])?, 0, 0)
        }
        "jalr" if a.len() == 1 => one(Jalr, 1, reg(&a[0])?, 0, 0),
        "ret" => {
            want(a, 0, name)?;
            one(Jalr, 0, 1, 0, 0)
        }
        "beqz" | "bnez" | "bltz" | "bgez" => {
            want(a, 2, name)?;
            let m = match name {
                "beqz" => Beq,
                "bnez" => Bne,
                "bltz" => Blt,
                _ => Bge,
            };
            one(m, 0, reg(&a[0])?, 0, ctx.target(&a[1])?)
        }
        "blez" | "bgtz" => {
            want(a, 2, name)?;
            let m = if name == "blez" { Bge } else { Blt };
            one(m, 0, 0, reg(&a[0])?, ctx.target(&a[1])?)
        }
        "bgt" | "ble" | "bgtu" | "bleu" => {
            want(a, 3, name)?;
            let m = match name {
                "bgt" => Blt,
                "ble" => Bge,
                "bgtu" => Bltu,
                _ => Bgeu,
            };
            one(m, 0, reg(&a[1])?, reg(&a[0])?, ctx.target(&a[2])?)
        }
        "csrr" => {
            want(a, 2, name)?;
            one(Csrrs, reg(&a[0])?, 0, 0, csr_operand(ctx, &a[1])?)
        }
        "csrw" | "csrs" | "csrc" => {
            want(a, 2, name)?;
            let m = match name {
                "csrw" => Csrrw,
                "csrs" => Csrrs,
                _ => Csrrc,
            };
            one(m, 0, reg(&a[1])?, 0, csr_operand(ctx, &a[0])?)
        }
        "csrwi" | "csrsi" | "csrci" => {
            want(a, 2, name)?;
            let m = match name {
                "csrwi" => Csrrwi,
                "csrsi" => Csrrsi,
                _ => Csrrci,
            };
            let uimm = ctx.constant(&a[1])?;
            if !(0..32).contains(&uimm) {
                return Err(format!("csr immediate {uimm} out of range"));
            }
            one(m, 0, uimm as u8, 0, csr_operand(ctx, &a[0])?)
        }
        _ => return Ok(None),
    };
    Ok(Some(seq))
}

fn expand_real(ctx: &Ctx, m: Mnemonic, a: &[String]) -> Result<Seq, String> {
    let name = m.name();
    let format = entry_for(m).expect("table mnemonic").format;
    let seq = match format {
        Format::R => {
            want(a, 3, name)?;
            one(m, reg(&a[0])?, reg(&a[1])?, reg(&a[2])?, 0)
        }
        Format::I if m.kind() == crate::isa::op::OpKind::Load => {
            want(a, 2, name)?;
            let (imm, base) = mem_operand(ctx, &a[1])?;
            one(m, reg(&a[0])?, base, 0, imm)
        }
        Format::I if m == Mnemonic::Jalr => {
            if a.len() == 2 {
                let (imm, base) = mem_operand(ctx, &a[1])?;
                one(m, reg(&a[0])?, base, 0, imm)
            } else {
                want(a, 3, name)?;
                one(m, reg(&a[0])?, reg(&a[1])?, 0, ctx.constant(&a[2])?)
            }
        }
        Format::I | Format::Shift64 | Format::ShiftW => {
            want(a, 3, name)?;
            one(m, reg(&a[0])?, reg(&a[1])?, 0, ctx.constant(&a[2])?)
        }
        Format::S => {
            want(a, 2, name)?;
            let (imm, base) = mem_operand(ctx, &a[1])?;
            one(m, 0, base, reg(&a[0])?, imm)
        }
        Format::B => {
            want(a, 3, name)?;
            one(m, 0, reg(&a[0])?, reg(&a[1])?, ctx.target(&a[2])?)
        }
        Format::U => {
            want(a, 2, name)?;
            let imm20 = ctx.constant(&a[1])?;
            if !(0..=0xf_ffff).contains(&imm20) {
                return Err(format!("{name} immediate {imm20:#x} exceeds 20 bits"));
            }
            one(m, reg(&a[0])?, 0, 0, sext32(imm20 << 12))
        }
        Format::Lpad => {
            want(a, 1, name)?;
            let label = ctx.constant(&a[0])?;
            if !(0..=0xf_ffff).contains(&label) {
                return Err(format!("landing-pad label {label:#x} exceeds 20 bits"));
            }
            one(m, 0, 0, 0, sext32(label << 12))
        }
        Format::J => {
            want(a, 2, name)?;
            one(m, reg(&a[0])?, 0, 0, ctx.target(&a[1])?)
        }
        Format::Fence | Format::Bare => one(m, 0, 0, 0, 0),
        Format::Csr => {
            want(a, 3, name)?;
            one(m, reg(&a[0])?, reg(&a[2])?, 0, csr_operand(ctx, &a[1])?)
        }
        Format::CsrImm => {
            want(a, 3, name)?;
            let uimm = ctx.constant(&a[2])?;
            if !(0..32).contains(&uimm) {
                return Err(format!("csr immediate {uimm} out of range"));
            }
            one(m, reg(&a[0])?, uimm as u8, 0, csr_operand(ctx, &a[1])?)
        }
        Format::Amo => {
            want(a, 3, name)?;
            let (imm, base) = mem_operand(ctx, &a[2])?;
            if imm != 0 {
                return Err(format!("{name} takes no offset"));
            }
            one(m, reg(&a[0])?, base, reg(&a[1])?, 0)
        }
        Format::SsPush => {
            want(a, 1, name)?;
            one(m, 0, 0, reg(&a[0])?, 0)
        }
        Format::SsPopChk => {
            want(a, 1, name)?;
            one(m, 0, reg(&a[0])?, 0, 0)
        }
        Format::SsRdp => {
            want(a, 1, name)?;
            one(m, reg(&a[0])?, 0, 0, 0)
        }
        Format::CFixed => {
            let implied = match m {
                Mnemonic::CSsPush => Some(1),
                Mnemonic::CSsPopChk => Some(5),
                _ => None,
            };
            match (implied, a) {
                (_, []) => {}
                (Some(r), [only]) if reg(only)? == r => {}
                _ => return Err(format!("unexpected operands for {name}")),
            }
            one(m, 0, 0, 0, 0)
        }
        Format::CI => {
            want(a, 2, name)?;
            one(m, reg(&a[0])?, 0, 0, ctx.constant(&a[1])?)
        }
        Format::CR => {
            want(a, 2, name)?;
            one(m, reg(&a[0])?, 0, reg(&a[1])?, 0)
        }
        Format::CJr => {
            want(a, 1, name)?;
            one(m, 0, reg(&a[0])?, 0, 0)
        }
    };
    Ok(seq)
}

fn expand(ctx: &Ctx, name: &str, args: &[String]) -> Result<Seq, String> {
    if let Some(seq) = expand_pseudo(ctx, name, args)? {
        return Ok(seq);
    }
    let m = *ctx
        .mnemonics
        .get(name)
        .ok_or_else(|| format!("unknown mnemonic `{name}`"))?;
    expand_real(ctx, m, args)
}

fn seq_size(seq: &Seq) -> u64 {
    seq.iter()
        .map(|(m, _)| if m.name().starts_with("c.") { 2 } else { 4 })
        .sum()
}

fn align_up(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

/// Assembles `source` with `.text` at `text_base`.
pub fn assemble_program(source: &str, text_base: u64) -> Result<Assembly, AsmError> {
    let mnemonics = mnemonic_table();
    let mut consts: HashMap<String, i64> = HashMap::new();
    let mut labels: Vec<(String, Section, u64, usize)> = Vec::new();
    let mut items: Vec<Item> = Vec::new();
    let mut section = Section::Text;
    let mut offsets = [0u64; 2];
    let idx = |s: Section| if s == Section::Text { 0 } else { 1 };

    for (i, raw_line) in source.lines().enumerate() {
        let line_no = i + 1;
        let mut rest = strip_comment(raw_line).trim();
        while let Some(colon) = rest.find(':') {
            let head = rest[..colon].trim();
            if !is_ident(head) || head.contains('"') {
                break;
            }
            labels.push((head.to_string(), section, offsets[idx(section)], line_no));
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (word, tail) = match rest.find(char::is_whitespace) {
            Some(sp) => (&rest[..sp], rest[sp..].trim()),
            None => (rest, ""),
        };
        let word = word.to_ascii_lowercase();
        let offset = offsets[idx(section)];
        let stmt = match word.as_str() {
            ".text" => {
                section = Section::Text;
                continue;
            }
            ".data" | ".rodata" | ".bss" => {
                section = Section::Data;
                continue;
            }
            ".section" => {
                section = if tail.starts_with(".text") {
                    Section::Text
                } else {
                    Section::Data
                };
                continue;
            }
            ".globl" | ".global" | ".type" | ".size" | ".option" | ".file" => continue,
            ".equ" | ".set" => {
                let args = split_args(tail);
                if args.len() != 2 || !is_ident(&args[0]) {
                    return Err(err(line_no, "expected `.equ name, value`"));
                }
                let v = parse_int(&args[1])
                    .or_else(|| consts.get(&args[1]).copied())
                    .ok_or_else(|| err(line_no, format!("bad constant `{}`", args[1])))?;
                consts.insert(args[0].clone(), v);
                continue;
            }
            ".align" | ".p2align" | ".balign" => {
                let n = parse_int(tail)
                    .filter(|n| (0..=16).contains(n) || word == ".balign")
                    .ok_or_else(|| err(line_no, "bad alignment"))?;
                let bytes = if word == ".balign" {
                    n as u64
                } else {
                    1u64 << n
                };
                if bytes == 0 || !bytes.is_power_of_two() {
                    return Err(err(line_no, "alignment must be a power of two"));
                }
                Stmt::Zero(align_up(offset, bytes) - offset)
            }
            ".zero" | ".space" | ".skip" => {
                let n = parse_int(tail)
                    .filter(|n| *n >= 0)
                    .ok_or_else(|| err(line_no, "bad size"))?;
                Stmt::Zero(n as u64)
            }
            ".byte" | ".half" | ".short" | ".word" | ".long" | ".dword" | ".quad" => {
                let width = match word.as_str() {
                    ".byte" => 1,
                    ".half" | ".short" => 2,
                    ".word" | ".long" => 4,
                    _ => 8,
                };
                Stmt::Values {
                    width,
                    exprs: split_args(tail),
                }
            }
            ".ascii" => Stmt::Bytes(parse_string(tail, line_no)?),
            ".string" | ".asciz" => {
                let mut b = parse_string(tail, line_no)?;
                b.push(0);
                Stmt::Bytes(b)
            }
            w if w.starts_with('.') && !w.starts_with(".c") => {
                return Err(err(line_no, format!("unknown directive `{w}`")))
            }
            _ => Stmt::Instr {
                mnemonic: word.clone(),
                args: split_args(tail),
            },
        };
        let size = match &stmt {
            Stmt::Zero(n) => *n,
            Stmt::Bytes(b) => b.len() as u64,
            Stmt::Values { width, exprs } => u64::from(*width) * exprs.len() as u64,
            Stmt::Instr { mnemonic, args } => {
                let ctx = Ctx {
                    symbols: None,
                    consts: &consts,
                    mnemonics: &mnemonics,
                    pc: text_base + offset,
                };
                seq_size(&expand(&ctx, mnemonic, args).map_err(|m| err(line_no, m))?)
            }
        };
        if matches!(stmt, Stmt::Instr { .. }) && section == Section::Data {
            return Err(err(line_no, "instructions must be in .text"));
        }
        offsets[idx(section)] += size;
        items.push(Item {
            line: line_no,
            section,
            offset,
            size,
            stmt,
        });
    }

    let data_base = align_up(text_base + offsets[0], PAGE_SIZE).max(text_base + PAGE_SIZE);
    let base_of = |s: Section| {
        if s == Section::Text {
            text_base
        } else {
            data_base
        }
    };
    let mut symbols = BTreeMap::new();
    for (name, sec, off, line) in labels {
        if consts.contains_key(&name) || symbols.insert(name.clone(), base_of(sec) + off).is_some()
        {
            return Err(err(line, format!("duplicate label `{name}`")));
        }
    }

    let mut text = vec![0u8; offsets[0] as usize];
    let mut data = vec![0u8; offsets[1] as usize];
    for item in &items {
        let pc = base_of(item.section) + item.offset;
        let ctx = Ctx {
            symbols: Some(&symbols),
            consts: &consts,
            mnemonics: &mnemonics,
            pc,
        };
        let mut bytes = Vec::with_capacity(item.size as usize);
        match &item.stmt {
            Stmt::Zero(n) => bytes.resize(*n as usize, 0),
            Stmt::Bytes(b) => bytes.extend_from_slice(b),
            Stmt::Values { width, exprs } => {
                for e in exprs {
                    let v = ctx.address(e).map_err(|m| err(item.line, m))?;
                    bytes.extend_from_slice(&v.to_le_bytes()[..*width as usize]);
                }
            }
            Stmt::Instr { mnemonic, args } => {
                let seq = expand(&ctx, mnemonic, args).map_err(|m| err(item.line, m))?;
                if seq_size(&seq) != item.size {
                    return Err(err(item.line, "instruction size changed between passes"));
                }
                for (m, ops) in seq {
                    let (word, size) = encode(m, ops).map_err(|e| err(item.line, e.to_string()))?;
                    bytes.extend_from_slice(&word.to_le_bytes()[..size as usize]);
                }
            }
        }
        let buf = if item.section == Section::Text {
            &mut text
        } else {
            &mut data
        };
        buf[item.offset as usize..(item.offset + item.size) as usize].copy_from_slice(&bytes);
    }

    let entry = symbols.get("_start").copied().unwrap_or(text_base);
    Ok(Assembly {
        text_base,
        text,
        data_base,
        data,
        symbols,
        entry,
    })
}

/// Assembles `source` at [`DEFAULT_TEXT_BASE`] and returns the text bytes.
pub fn assemble(source: &str) -> Result<Vec<u8>, AsmError> {
    assemble_program(source, DEFAULT_TEXT_BASE).map(|a| a.text)
}
