//! Straight-line RV64IM programs checked against a naive interpreter, plus
//! the x0 hardwiring.

mod common;

use cfisim::isa::step;
use common::*;
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
enum Op {
    R { f7: u32, f3: u32, w: bool },
    I { f3: u32, w: bool },
    Shift { f3: u32, arith: bool, w: bool },
    Lui,
}

const R_OPS: [(u32, u32); 18] = [
    (0x00, 0),
    (0x20, 0),
    (0x00, 1),
    (0x00, 2),
    (0x00, 3),
    (0x00, 4),
    (0x00, 5),
    (0x20, 5),
    (0x00, 6),
    (0x00, 7),
    (0x01, 0),
    (0x01, 1),
    (0x01, 2),
    (0x01, 3),
    (0x01, 4),
    (0x01, 5),
    (0x01, 6),
    (0x01, 7),
];
const RW_OPS: [(u32, u32); 10] = [
    (0x00, 0),
    (0x20, 0),
    (0x00, 1),
    (0x00, 5),
    (0x20, 5),
    (0x01, 0),
    (0x01, 4),
    (0x01, 5),
    (0x01, 6),
    (0x01, 7),
];

fn pick(sel: u32) -> Op {
    match sel % 6 {
        0 => {
            let (f7, f3) = R_OPS[(sel / 6) as usize % R_OPS.len()];
            Op::R { f7, f3, w: false }
        }
        1 => {
            let (f7, f3) = RW_OPS[(sel / 6) as usize % RW_OPS.len()];
            Op::R { f7, f3, w: true }
        }
        2 => {
            const F3: [u32; 6] = [0, 2, 3, 4, 6, 7];
            Op::I {
                f3: F3[(sel / 6) as usize % 6],
                w: false,
            }
        }
        3 => Op::I { f3: 0, w: true },
        4 => {
            const S: [(u32, bool); 3] = [(1, false), (5, false), (5, true)];
            let (f3, arith) = S[(sel / 6) as usize % 3];
            Op::Shift {
                f3,
                arith,
                w: sel / 18 % 2 == 1,
            }
        }
        _ => Op::Lui,
    }
}

fn sx32(v: u64) -> u64 {
    v as u32 as i32 as i64 as u64
}

fn ref_r(f7: u32, f3: u32, w: bool, a: u64, b: u64) -> u64 {
    if w {
        let (a32, b32) = (a as u32, b as u32);
        let (sa, sb) = (a32 as i32, b32 as i32);
        let v: u32 = match (f7, f3) {
            (0x00, 0) => a32.wrapping_add(b32),
            (0x20, 0) => a32.wrapping_sub(b32),
            (0x00, 1) => a32 << (b32 & 31),
            (0x00, 5) => a32 >> (b32 & 31),
            (0x20, 5) => (sa >> (b32 & 31)) as u32,
            (0x01, 0) => a32.wrapping_mul(b32),
            (0x01, 4) => match sb {
                0 => u32::MAX,
                -1 if sa == i32::MIN => sa as u32,
                _ => (sa / sb) as u32,
            },
            (0x01, 5) => a32.checked_div(b32).unwrap_or(u32::MAX),
            (0x01, 6) => match sb {
                0 => a32,
                -1 => 0,
                _ => (sa % sb) as u32,
            },
            (0x01, 7) => a32.checked_rem(b32).unwrap_or(a32),
            _ => unreachable!(),
        };
        return sx32(u64::from(v));
    }
    let (sa, sb) = (a as i64, b as i64);
    match (f7, f3) {
        (0x00, 0) => a.wrapping_add(b),
        (0x20, 0) => a.wrapping_sub(b),
        (0x00, 1) => a << (b & 63),
        (0x00, 2) => u64::from(sa < sb),
        (0x00, 3) => u64::from(a < b),
        (0x00, 4) => a ^ b,
        (0x00, 5) => a >> (b & 63),
        (0x20, 5) => (sa >> (b & 63)) as u64,
        (0x00, 6) => a | b,
        (0x00, 7) => a & b,
        (0x01, 0) => a.wrapping_mul(b),
        (0x01, 1) => ((i128::from(sa) * i128::from(sb)) >> 64) as u64,
        (0x01, 2) => ((i128::from(sa) * (b as i128)) >> 64) as u64,
        (0x01, 3) => ((u128::from(a) * u128::from(b)) >> 64) as u64,
        (0x01, 4) => match sb {
            0 => u64::MAX,
            -1 if sa == i64::MIN => a,
            _ => (sa / sb) as u64,
        },
        (0x01, 5) => a.checked_div(b).unwrap_or(u64::MAX),
        (0x01, 6) => match sb {
            0 => a,
            -1 => 0,
            _ => (sa % sb) as u64,
        },
        (0x01, 7) => a.checked_rem(b).unwrap_or(a),
        _ => unreachable!(),
    }
}

fn ref_i(f3: u32, w: bool, a: u64, imm: i64) -> u64 {
    let b = imm as u64;
    if w {
        return sx32(a.wrapping_add(b));
    }
    match f3 {
        0 => a.wrapping_add(b),
        2 => u64::from((a as i64) < imm),
        3 => u64::from(a < b),
        4 => a ^ b,
        6 => a | b,
        7 => a & b,
        _ => unreachable!(),
    }
}

fn ref_shift(f3: u32, arith: bool, w: bool, a: u64, sh: u32) -> u64 {
    match (w, f3, arith) {
        (false, 1, _) => a << sh,
        (false, 5, false) => a >> sh,
        (false, 5, true) => ((a as i64) >> sh) as u64,
        (true, 1, _) => sx32(u64::from((a as u32) << sh)),
        (true, 5, false) => sx32(u64::from((a as u32) >> sh)),
        (true, 5, true) => ((a as u32 as i32) >> sh) as i64 as u64,
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone)]
struct Instr {
    op: Op,
    rd: u32,
    rs1: u32,
    rs2: u32,
    imm: u32,
}

impl Instr {
    fn encode(&self) -> u32 {
        let (rd, rs1, rs2) = (self.rd, self.rs1, self.rs2);
        match self.op {
            Op::R { f7, f3, w } => r_type(f7, rs2, rs1, f3, rd, if w { 0x3b } else { 0x33 }),
            Op::I { f3, w } => i_type(self.imm, rs1, f3, rd, if w { 0x1b } else { 0x13 }),
            Op::Shift { f3, arith, w } => {
                let sh = self.imm & if w { 31 } else { 63 };
                let hi = if arith { 0x400 } else { 0 };
                i_type(hi | sh, rs1, f3, rd, if w { 0x1b } else { 0x13 })
            }
            Op::Lui => u_type(self.imm, rd, 0x37),
        }
    }

    fn apply(&self, x: &mut [u64; 32]) {
        let (a, b) = (x[self.rs1 as usize], x[self.rs2 as usize]);
        let v = match self.op {
            Op::R { f7, f3, w } => ref_r(f7, f3, w, a, b),
            Op::I { f3, w } => ref_i(f3, w, a, ((self.imm << 20) as i32 >> 20) as i64),
            Op::Shift { f3, arith, w } => {
                ref_shift(f3, arith, w, a, self.imm & if w { 31 } else { 63 })
            }
            Op::Lui => sx32(u64::from(self.imm << 12)),
        };
        if self.rd != 0 {
            x[self.rd as usize] = v;
        }
    }
}

fn instr() -> impl Strategy<Value = Instr> {
    (any::<u32>(), 0u32..32, 0u32..32, 0u32..32, any::<u32>()).prop_map(
        |(sel, rd, rs1, rs2, imm)| {
            let op = pick(sel);
            let imm = match op {
                Op::Lui => imm & 0xf_ffff,
                _ => imm & 0xfff,
            };
            Instr {
                op,
                rd,
                rs1,
                rs2,
                imm,
            }
        },
    )
}

const SEEDS: [u64; 8] = [
    0,
    1,
    u64::MAX,
    i64::MIN as u64,
    i64::MAX as u64,
    0x8000_0000,
    0xffff_ffff,
    0x0123_4567_89ab_cdef,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn simulator_matches_reference(prog in prop::collection::vec(instr(), 1..64), seed in any::<u64>()) {
        let words: Vec<u32> = prog.iter().map(Instr::encode).collect();
        let (mut hart, mut mem) = machine(&words);
        let mut x = [0u64; 32];
        for r in 1..32 {
            let v = if r < 9 { SEEDS[r - 1] } else { seed.rotate_left(r as u32) ^ r as u64 };
            x[r] = v;
            hart.set_x(r as u8, v);
        }
        for (i, ins) in prog.iter().enumerate() {
            step(&mut hart, &mut mem).map_err(|e| TestCaseError::fail(format!("step {i}: {e}")))?;
            ins.apply(&mut x);
            prop_assert_eq!(hart.regs(), &x, "after {} ({:?})", i, ins);
        }
    }

    #[test]
    fn x0_stays_zero(prog in prop::collection::vec(instr(), 1..64)) {
        let words: Vec<u32> = prog
            .iter()
            .map(|i| Instr { rd: 0, ..i.clone() }.encode())
            .collect();
        let (mut hart, mut mem) = machine(&words);
        for r in 1..32 {
            hart.set_x(r, u64::MAX - u64::from(r));
        }
        let before = *hart.regs();
        for _ in &prog {
            step(&mut hart, &mut mem).unwrap();
            prop_assert_eq!(hart.x(0), 0);
        }
        prop_assert_eq!(hart.regs(), &before);
    }
}
