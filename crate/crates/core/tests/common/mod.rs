//! Helpers shared by the integration tests: independent instruction-field
//! builders and small run wrappers.
#![allow(dead_code)]

use cfisim::harness::{simulate, RunConfig, Simulation};
use cfisim::isa::decode::{decode, CfiEnables};
use cfisim::isa::encode::{encode, Operands};
use cfisim::isa::opcodes::{Format, OpcodeEntry, OPCODES16, OPCODES32};
use cfisim::isa::{step, ExceptionCause, HartState, Mnemonic, Privilege, SatpMode};
use cfisim::landing_pad::{lpu_chain, lpu_observe, LpuConfig, LpuState, Retirement};
use cfisim::memory::{MemoryImage, PageAttr};
use cfisim::program::{assemble, assemble_program, LoadedProgram};

pub const BASE: u64 = 0x1_0000;

pub fn r_type(f7: u32, rs2: u32, rs1: u32, f3: u32, rd: u32, opc: u32) -> u32 {
    f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opc
}

pub fn i_type(imm12: u32, rs1: u32, f3: u32, rd: u32, opc: u32) -> u32 {
    (imm12 & 0xfff) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opc
}

pub fn u_type(imm20: u32, rd: u32, opc: u32) -> u32 {
    (imm20 & 0xf_ffff) << 12 | rd << 7 | opc
}

pub const OPC_SYSTEM: u32 = 0b111_0011;
pub const OPC_AUIPC: u32 = 0b001_0111;
pub const OPC_AMO: u32 = 0b010_1111;

/// `mop.rr.n`: funct7 = 1 n[2] 00 n[1:0] 1.
pub fn mop_rr(n: u32, rs2: u32, rs1: u32, rd: u32) -> u32 {
    let f7 = 0b100_0001 | ((n >> 2) & 1) << 5 | (n & 0b11) << 1;
    r_type(f7, rs2, rs1, 0b100, rd, OPC_SYSTEM)
}

/// `mop.r.n`: funct12 = 1 n[4] 00 n[3:2] 0111 n[1:0].
pub fn mop_r(n: u32, rs1: u32, rd: u32) -> u32 {
    let f12 = 0b1000_0001_1100 | ((n >> 4) & 1) << 10 | ((n >> 2) & 0b11) << 6 | (n & 0b11);
    i_type(f12, rs1, 0b100, rd, OPC_SYSTEM)
}

/// `c.mop.n` for odd n in 1..=15.
pub fn c_mop(n: u32) -> u32 {
    0b011 << 13 | n << 7 | 0b01
}

pub fn lpad(label: u32) -> u32 {
    u_type(label, 0, OPC_AUIPC)
}

pub fn sspush(rs2: u32) -> u32 {
    mop_rr(7, rs2, 0, 0)
}

pub fn sspopchk(rs1: u32) -> u32 {
    mop_r(28, rs1, 0)
}

pub fn ssrdp(rd: u32) -> u32 {
    mop_r(28, 0, rd)
}

pub fn ssamoswap(double: bool, rd: u32, rs1: u32, rs2: u32) -> u32 {
    let f3 = if double { 0b011 } else { 0b010 };
    r_type(0b01001 << 2, rs2, rs1, f3, rd, OPC_AMO)
}

pub fn program(src: &str) -> LoadedProgram {
    assemble_program(src, BASE)
        .unwrap_or_else(|e| panic!("assembly failed: {e}\n{src}"))
        .into_program()
}

pub fn cfg(ss: bool, lp: bool) -> RunConfig {
    RunConfig {
        enable_zicfiss: ss,
        enable_zicfilp: lp,
        ..RunConfig::default()
    }
}

pub fn run(src: &str, ss: bool, lp: bool) -> Simulation {
    simulate(&program(src), &cfg(ss, lp)).expect("simulation setup")
}

/// Every encodable table row.
pub fn all_rows() -> Vec<&'static OpcodeEntry> {
    OPCODES32.iter().chain(OPCODES16.iter()).collect()
}

fn sext(v: u64, bits: u32) -> i64 {
    ((v << (64 - bits)) as i64) >> (64 - bits)
}

/// Operands for `row` drawn from the raw entropy `r`, constrained to what the
/// encoding can express and to what decodes back to the same row.
pub fn sample_operands(row: &OpcodeEntry, r: [u64; 4]) -> Operands {
    let reg = |x: u64| (x % 32) as u8;
    let nonzero = |x: u64| (x % 31 + 1) as u8;
    let link = |x: u64| if x.is_multiple_of(2) { 1 } else { 5 };
    let mut ops = Operands {
        rd: reg(r[0]),
        rs1: reg(r[1]),
        rs2: reg(r[2]),
        imm: 0,
    };
    let m = row.mnemonic;
    match row.format {
        Format::R | Format::Amo => {}
        Format::I => {
            ops.rs2 = 0;
            ops.imm = sext(r[3], 12);
        }
        Format::Shift64 => {
            ops.rs2 = 0;
            ops.imm = (r[3] % 64) as i64;
        }
        Format::ShiftW => {
            ops.rs2 = 0;
            ops.imm = (r[3] % 32) as i64;
        }
        Format::S | Format::B => {
            ops.rd = 0;
            ops.imm = if row.format == Format::S {
                sext(r[3], 12)
            } else {
                sext(r[3], 13) & !1
            };
        }
        Format::U | Format::Lpad => {
            ops.rs1 = 0;
            ops.rs2 = 0;
            ops.imm = sext(r[3] << 12, 32);
            if row.format == Format::Lpad {
                ops.rd = 0;
            } else if m == Mnemonic::Auipc {
                ops.rd = nonzero(r[0]);
            }
        }
        Format::J => {
            ops.rs1 = 0;
            ops.rs2 = 0;
            ops.imm = sext(r[3], 21) & !1;
        }
        Format::Fence | Format::Bare | Format::CFixed => {
            ops = Operands::default();
            match m {
                Mnemonic::CSsPush => ops.rs2 = 1,
                Mnemonic::CSsPopChk => ops.rs1 = 5,
                _ => {}
            }
        }
        Format::Csr | Format::CsrImm => {
            ops.rs2 = 0;
            ops.imm = (r[3] % 4096) as i64;
        }
        Format::SsPush => {
            ops = Operands {
                rs2: link(r[2]),
                ..Operands::default()
            }
        }
        Format::SsPopChk => {
            ops = Operands {
                rs1: link(r[1]),
                ..Operands::default()
            }
        }
        Format::SsRdp => {
            ops = Operands {
                rd: nonzero(r[0]),
                ..Operands::default()
            }
        }
        Format::CI => {
            ops.rd = nonzero(r[0]);
            ops.rs1 = ops.rd;
            ops.rs2 = 0;
            ops.imm = sext(r[3], 6);
        }
        Format::CR => {
            ops.rd = nonzero(r[0]);
            ops.rs2 = nonzero(r[2]);
            ops.rs1 = if m == Mnemonic::CAdd { ops.rd } else { 0 };
        }
        Format::CJr => {
            ops.rs1 = nonzero(r[1]);
            ops.rs2 = 0;
            ops.rd = if m == Mnemonic::CJalr { 1 } else { 0 };
        }
    }
    ops
}

pub const DATA: u64 = 0x2_0000;
pub const SHADOW: u64 = 0x3_0000;
pub const SHADOW_TOP: u64 = SHADOW + 0x1000;

/// A hart at `BASE` with `words` as text, one normal data page at `DATA` and
/// one shadow-stack page at `SHADOW`. Translation is on, `ssp` is at the top
/// of the shadow page and `sp` at the top of the data page.
pub fn machine(words: &[u32]) -> (HartState, MemoryImage) {
    let mut mem = MemoryImage::new();
    mem.map("text", BASE, 0x1000, PageAttr::Normal).unwrap();
    mem.map("data", DATA, 0x1000, PageAttr::Normal).unwrap();
    mem.map_shadow_stack(SHADOW, 0x1000).unwrap();
    let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    mem.load(BASE, &bytes).unwrap();
    let mut hart = HartState::new(BASE);
    hart.csr.set_satp_mode(SatpMode::Enabled);
    hart.csr.ssp = SHADOW_TOP;
    hart.set_x(2, DATA + 0x1000);
    (hart, mem)
}

/// Memory instructions used by the policy matrix: `(name, is_zicfiss, width)`.
pub const POLICY_OPS: [(&str, bool, u64); 8] = [
    ("sspush", true, 8),
    ("sspopchk", true, 8),
    ("ssamoswap.w", true, 4),
    ("ssamoswap.d", true, 8),
    ("sd", false, 8),
    ("ld", false, 8),
    ("sw", false, 4),
    ("lbu", false, 1),
];

/// Executes one policy-matrix access at `page + offset` (offset aligned
/// down to the access width) and returns `None` when it succeeded or the
/// fault cause otherwise.
pub fn policy_access(op: &str, page: u64, offset: u64) -> Option<ExceptionCause> {
    let width = POLICY_OPS.iter().find(|o| o.0 == op).unwrap().2;
    let addr = page + (offset % 0x1000) / width * width;
    let word = match op {
        "sspush" => sspush(1),
        "sspopchk" => sspopchk(1),
        "ssamoswap.w" => ssamoswap(false, 10, 6, 11),
        "ssamoswap.d" => ssamoswap(true, 10, 6, 11),
        "sd" => r_type(0, 11, 6, 3, 0, 0x23),
        "ld" => i_type(0, 6, 3, 10, 0x03),
        "sw" => r_type(0, 11, 6, 2, 0, 0x23),
        "lbu" => i_type(0, 6, 4, 10, 0x03),
        _ => unreachable!(),
    };
    let (mut hart, mut mem) = machine(&[word]);
    hart.set_user_cfi(true, true);
    hart.privilege = Privilege::User;
    hart.set_x(6, addr);
    hart.set_x(11, 0x5555);
    hart.set_x(1, 0x7777);
    match op {
        "sspush" => hart.csr.ssp = addr + 8,
        "sspopchk" => {
            hart.csr.ssp = addr;
            mem.poke(addr, 8, 0x7777).unwrap();
        }
        _ => {}
    }
    step(&mut hart, &mut mem).err().map(|e| e.cause)
}

/// Expected outcome of [`policy_access`].
pub fn policy_expected(is_zicfiss: bool, shadow_page: bool) -> Option<ExceptionCause> {
    (is_zicfiss != shadow_page).then_some(ExceptionCause::StoreAccessFault)
}

/// One step of xorshift64; enough entropy for stream fuzzing.
pub fn xorshift(state: &mut u64) -> u64 {
    *state ^= *state << 13;
    *state ^= *state >> 7;
    *state ^= *state << 17;
    *state
}

/// A random retirement drawn from the instructions the LPU cares about.
pub fn random_retirement(rng: &mut u64, pc: u64) -> Retirement {
    let r = xorshift(rng);
    let label = (r >> 8) as u32 % 4;
    let (word, x7) = match r % 11 {
        0 | 1 => (lpad(label), None),
        2 => (i_type(0, 6, 0, 1, 0x67), None),
        3 => (i_type(0, 1, 0, 0, 0x67), None),
        4 => (i_type(0, 6, 0, 0, 0x67), None),
        5 => (0x9002 | 6 << 7, None),
        6 => (0x8002 | 5 << 7, None),
        7 => (u_type(label, 7, 0x37), Some(u64::from(label) << 12)),
        8 => (i_type(label, 0, 0, 7, 0x13), Some(u64::from(label))),
        9 => (0x0000_006f | 8 << 21, None),
        _ => (i_type(1, 10, 0, 10, 0x13), None),
    };
    Retirement {
        pc,
        op: decode(word, CfiEnables::ALL).unwrap(),
        x7_write: x7,
    }
}

/// Outcome of folding a stream: index of the faulting retirement (if any)
/// and the final LPU state.
pub type StreamOutcome = (Option<usize>, LpuState);

pub fn fold_single(start: LpuState, stream: &[Retirement], cfg: LpuConfig) -> StreamOutcome {
    let mut s = start;
    for (i, r) in stream.iter().enumerate() {
        match lpu_observe(&s, r, cfg) {
            Ok(next) => s = next,
            Err(_) => return (Some(i), s.after_trap()),
        }
    }
    (None, s)
}

pub fn fold_dual(start: LpuState, stream: &[Retirement], cfg: LpuConfig) -> StreamOutcome {
    let mut s = start;
    for (k, pair) in stream.chunks(2).enumerate() {
        let out = lpu_chain(&s, &pair[0], pair.get(1), cfg);
        if let Some((port, _)) = out.fault {
            // The older instruction of the pair committed if port 1 faulted.
            return (Some(2 * k + port), out.state);
        }
        s = out.state;
    }
    (None, s)
}

pub fn random_stream(rng: &mut u64, len: usize) -> Vec<Retirement> {
    (0..len)
        .map(|i| random_retirement(rng, BASE + 4 * i as u64))
        .collect()
}

pub fn word_of(bytes: &[u8]) -> u32 {
    match bytes.len() {
        2 => u32::from(u16::from_le_bytes([bytes[0], bytes[1]])),
        4 => u32::from_le_bytes(bytes.try_into().unwrap()),
        n => panic!("unexpected length {n}"),
    }
}

/// Returns a description of the first mismatch, if any.
pub fn round_trip_check(row: &OpcodeEntry, ops: Operands) -> Result<(), String> {
    let (w, len) = encode(row.mnemonic, ops).map_err(|e| format!("{:?}: {e}", row.mnemonic))?;
    let op = decode(w, CfiEnables::ALL).map_err(|e| format!("{:?} {ops:?}: {e}", row.mnemonic))?;
    if op.mnemonic != row.mnemonic || op.size_bytes != len {
        return Err(format!(
            "{:?} {ops:?} decoded as {:?}",
            row.mnemonic, op.mnemonic
        ));
    }
    let back = Operands {
        rd: op.rd,
        rs1: op.rs1,
        rs2: op.rs2,
        imm: op.imm,
    };
    if back != ops {
        return Err(format!("{:?}: {ops:?} came back as {back:?}", row.mnemonic));
    }
    let text = op.to_string();
    let bytes = assemble(&text).map_err(|e| format!("`{text}`: {e}"))?;
    if word_of(&bytes) != w {
        return Err(format!(
            "`{text}` assembled to {:#x}, want {w:#x}",
            word_of(&bytes)
        ));
    }
    Ok(())
}
