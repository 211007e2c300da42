//! Fetch/decode/execute loop.
//!
//! Every fallible part of an instruction (memory policy, CSR permission,
//! landing-pad check, pop-check compare) runs before anything is written, so
//! exceptions are precise.

use serde::Serialize;
use std::collections::BTreeMap;

use super::decode::decode;
use super::exception::{CfiException, ExceptionCause, FaultOrigin};
use super::hart::{Halt, HartState, REG_LABEL};
use super::op::{CfiTag, DecodedOp, Mnemonic, OpKind};
use crate::landing_pad::{self, LpuConfig, Retirement};
use crate::memory::{MemFault, MemoryImage};
use crate::shadow_stack;

/// Linux syscall numbers understood by the user-mode environment.
pub mod syscall {
    pub const READ: u64 = 63;
    pub const WRITE: u64 = 64;
    pub const EXIT: u64 = 93;
    pub const EXIT_GROUP: u64 = 94;
}

const EBADF: i64 = -9;

/// One retired instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retired {
    pub pc: u64,
    pub op: DecodedOp,
    pub next_pc: u64,
    /// Control transfer redirected the fetch stream.
    pub taken: bool,
}

fn data_fault(fault: MemFault, pc: u64, is_store: bool) -> CfiException {
    match fault {
        // Page-attribute violations are always reported as store access faults.
        MemFault::Policy { addr, .. } => CfiException::new(
            ExceptionCause::StoreAccessFault,
            FaultOrigin::PagePolicy,
            pc,
            addr,
            fault.to_string(),
        ),
        MemFault::Unmapped { addr } | MemFault::Misaligned { addr } => {
            let cause = if is_store {
                ExceptionCause::StoreAccessFault
            } else {
                ExceptionCause::LoadAccessFault
            };
            CfiException::new(cause, FaultOrigin::Memory, pc, addr, fault.to_string())
        }
    }
}

fn illegal(pc: u64, raw: u32, detail: impl Into<String>) -> CfiException {
    CfiException::new(
        ExceptionCause::IllegalInstruction,
        FaultOrigin::Decode,
        pc,
        u64::from(raw),
        detail,
    )
}

fn sext32(v: u64) -> u64 {
    i64::from(v as u32 as i32) as u64
}

fn alu(m: Mnemonic, a: u64, b: u64) -> u64 {
    use Mnemonic::*;
    let (sa, sb) = (a as i64, b as i64);
    match m {
        Add | Addi | CAddi | CAdd => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Sll | Slli => a << (b & 63),
        Slt | Slti => u64::from(sa < sb),
        Sltu | Sltiu => u64::from(a < b),
        Xor | Xori => a ^ b,
        Srl | Srli => a >> (b & 63),
        Sra | Srai => (sa >> (b & 63)) as u64,
        Or | Ori => a | b,
        And | Andi => a & b,
        Addw | Addiw => sext32(a.wrapping_add(b)),
        Subw => sext32(a.wrapping_sub(b)),
        Sllw | Slliw => sext32(((a as u32) << (b & 31)) as u64),
        Srlw | Srliw => sext32(((a as u32) >> (b & 31)) as u64),
        Sraw | Sraiw => ((a as i32) >> (b & 31)) as i64 as u64,
        Mul => a.wrapping_mul(b),
        Mulh => ((i128::from(sa) * i128::from(sb)) >> 64) as u64,
        Mulhsu => ((i128::from(sa) * i128::from(b)) >> 64) as u64,
        Mulhu => ((u128::from(a) * u128::from(b)) >> 64) as u64,
        Div => {
            if b == 0 {
                u64::MAX
            } else {
                sa.wrapping_div(sb) as u64
            }
        }
        Divu => a.checked_div(b).unwrap_or(u64::MAX),
        Rem => {
            if b == 0 {
                a
            } else {
                sa.wrapping_rem(sb) as u64
            }
        }
        Remu => {
            if b == 0 {
                a
            } else {
                a % b
            }
        }
        Mulw => sext32((a as u32).wrapping_mul(b as u32) as u64),
        Divw => {
            let (x, y) = (a as i32, b as i32);
            if y == 0 {
                u64::MAX
            } else {
                i64::from(x.wrapping_div(y)) as u64
            }
        }
        Divuw => {
            let (x, y) = (a as u32, b as u32);
            x.checked_div(y).map_or(u64::MAX, |q| sext32(u64::from(q)))
        }
        Remw => {
            let (x, y) = (a as i32, b as i32);
            if y == 0 {
                i64::from(x) as u64
            } else {
                i64::from(x.wrapping_rem(y)) as u64
            }
        }
        Remuw => {
            let (x, y) = (a as u32, b as u32);
            if y == 0 {
                sext32(u64::from(x))
            } else {
                sext32(u64::from(x % y))
            }
        }
        _ => unreachable!("{m:?} is not an ALU op"),
    }
}

struct Flow {
    next_pc: u64,
    taken: bool,
}

fn syscall(hart: &mut HartState, mem: &mut MemoryImage, pc: u64) -> Result<(), CfiException> {
    let (a0, a1, a2, nr) = (hart.x(10), hart.x(11), hart.x(12), hart.x(17));
    match nr {
        syscall::EXIT | syscall::EXIT_GROUP => {
            hart.halted = Some(Halt::Exited(a0 as i64));
        }
        syscall::WRITE => {
            if a0 != 1 && a0 != 2 {
                hart.set_x(10, EBADF as u64);
                return Ok(());
            }
            let mut bytes = Vec::with_capacity(a2 as usize);
            for i in 0..a2 {
                let b = mem
                    .read(a1.wrapping_add(i), 1, false)
                    .map_err(|f| data_fault(f, pc, false))?;
                bytes.push(b as u8);
            }
            hart.output.extend_from_slice(&bytes);
            hart.set_x(10, a2);
        }
        syscall::READ => {
            if a0 != 0 {
                hart.set_x(10, EBADF as u64);
                return Ok(());
            }
            let avail = (hart.input.len() - hart.input_pos) as u64;
            let n = a2.min(avail);
            for i in 0..n {
                mem.check(a1.wrapping_add(i), 1, false)
                    .map_err(|f| data_fault(f, pc, true))?;
            }
            for i in 0..n {
                let b = hart.input[hart.input_pos + i as usize];
                mem.write(a1 + i, 1, u64::from(b), false)
                    .expect("checked above");
            }
            hart.input_pos += n as usize;
            hart.set_x(10, n);
        }
        other => {
            return Err(CfiException::new(
                ExceptionCause::EnvironmentCall,
                FaultOrigin::Syscall,
                pc,
                other,
                format!("unsupported syscall {other}"),
            ))
        }
    }
    Ok(())
}

fn execute(
    hart: &mut HartState,
    mem: &mut MemoryImage,
    op: &DecodedOp,
) -> Result<Flow, CfiException> {
    use Mnemonic::*;
    let pc = hart.pc;
    let fall = pc.wrapping_add(u64::from(op.size_bytes));
    let mut flow = Flow {
        next_pc: fall,
        taken: false,
    };
    let x1 = hart.x(op.rs1);
    let x2 = hart.x(op.rs2);
    let imm = op.imm as u64;
    match op.mnemonic {
        Lui => hart.set_x(op.rd, imm),
        Auipc => hart.set_x(op.rd, pc.wrapping_add(imm)),
        Lpad | CNop | Fence => {}
        Mop => hart.set_x(op.rd, 0),
        Jal => {
            hart.set_x(op.rd, fall);
            flow = Flow {
                next_pc: pc.wrapping_add(imm),
                taken: true,
            };
        }
        Jalr | CJr | CJalr => {
            let target = x1.wrapping_add(if op.mnemonic == Jalr { imm } else { 0 }) & !1;
            hart.set_x(op.rd, fall);
            flow = Flow {
                next_pc: target,
                taken: true,
            };
        }
        Beq | Bne | Blt | Bge | Bltu | Bgeu => {
            let taken = match op.mnemonic {
                Beq => x1 == x2,
                Bne => x1 != x2,
                Blt => (x1 as i64) < (x2 as i64),
                Bge => (x1 as i64) >= (x2 as i64),
                Bltu => x1 < x2,
                _ => x1 >= x2,
            };
            if taken {
                flow = Flow {
                    next_pc: pc.wrapping_add(imm),
                    taken: true,
                };
            }
        }
        Lb | Lh | Lw | Ld | Lbu | Lhu | Lwu => {
            let width = match op.mnemonic {
                Lb | Lbu => 1,
                Lh | Lhu => 2,
                Lw | Lwu => 4,
                _ => 8,
            };
            let raw = mem
                .read(x1.wrapping_add(imm), width, false)
                .map_err(|f| data_fault(f, pc, false))?;
            let value = match op.mnemonic {
                Lb => raw as u8 as i8 as i64 as u64,
                Lh => raw as u16 as i16 as i64 as u64,
                Lw => sext32(raw),
                _ => raw,
            };
            hart.set_x(op.rd, value);
        }
        Sb | Sh | Sw | Sd => {
            let width = match op.mnemonic {
                Sb => 1,
                Sh => 2,
                Sw => 4,
                _ => 8,
            };
            mem.write(x1.wrapping_add(imm), width, x2, false)
                .map_err(|f| data_fault(f, pc, true))?;
        }
        Addi | Slti | Sltiu | Xori | Ori | Andi | Slli | Srli | Srai | Addiw | Slliw | Srliw
        | Sraiw => hart.set_x(op.rd, alu(op.mnemonic, x1, imm)),
        CAddi => hart.set_x(op.rd, alu(op.mnemonic, x1, imm)),
        CLi => hart.set_x(op.rd, imm),
        CMv => hart.set_x(op.rd, x2),
        CAdd => hart.set_x(op.rd, hart.x(op.rd).wrapping_add(x2)),
        Ecall => syscall(hart, mem, pc)?,
        Ebreak => {
            return Err(CfiException::new(
                ExceptionCause::Breakpoint,
                FaultOrigin::Breakpoint,
                pc,
                pc,
                "ebreak",
            ))
        }
        Csrrw | Csrrs | Csrrc | Csrrwi | Csrrsi | Csrrci => {
            let addr = op.imm as u16;
            let src = if matches!(op.mnemonic, Csrrwi | Csrrsi | Csrrci) {
                u64::from(op.rs1)
            } else {
                x1
            };
            let writes = matches!(op.mnemonic, Csrrw | Csrrwi) || op.rs1 != 0;
            let reads = !matches!(op.mnemonic, Csrrw | Csrrwi) || op.rd != 0;
            let old = if reads {
                hart.csr
                    .read(addr, hart.privilege, hart.instret)
                    .map_err(|e| illegal(pc, op.raw, format!("csr {addr:#x}: {e:?}")))?
            } else {
                0
            };
            if writes {
                let new = match op.mnemonic {
                    Csrrw | Csrrwi => src,
                    Csrrs | Csrrsi => old | src,
                    _ => old & !src,
                };
                hart.csr
                    .write(addr, hart.privilege, new)
                    .map_err(|e| illegal(pc, op.raw, format!("csr {addr:#x}: {e:?}")))?;
            }
            hart.set_x(op.rd, old);
        }
        SsPush | CSsPush | SsPopChk | CSsPopChk | SsAmoSwapW | SsAmoSwapD => {
            shadow_stack::ssu_gate(op, hart.privilege, &hart.csr).into_result(pc)?;
            match op.cfi_tag {
                CfiTag::SsPush => shadow_stack::exec_sspush(hart, mem, op.rs2)?,
                CfiTag::SsPopChk => shadow_stack::exec_sspopchk(hart, mem, op.rs1)?,
                _ => shadow_stack::exec_ssamoswap(hart, mem, op)?,
            }
        }
        SsRdp => shadow_stack::exec_ssrdp(hart, op.rd),
        _ => hart.set_x(op.rd, alu(op.mnemonic, x1, x2)),
    }
    Ok(flow)
}

fn record_trap(hart: &mut HartState, e: &CfiException) {
    hart.lpu = hart.lpu.after_trap();
    hart.csr.mepc = e.pc;
    hart.csr.mcause = e.cause.code();
    hart.csr.mtval = e.tval;
}

fn lpu_config(hart: &HartState, lp_enabled: bool) -> LpuConfig {
    LpuConfig {
        lp_enabled,
        protect_ret: hart.config.lp_protect_ret,
    }
}

/// Executes one instruction. On success exactly one instruction retired; on
/// error the hart is unchanged except for the trap CSRs and a cleared ELP.
pub fn step(hart: &mut HartState, mem: &mut MemoryImage) -> Result<Retired, CfiException> {
    assert!(hart.halted.is_none(), "step on a halted hart");
    let result = step_inner(hart, mem);
    if let Err(e) = &result {
        record_trap(hart, e);
    }
    result
}

fn step_inner(hart: &mut HartState, mem: &mut MemoryImage) -> Result<Retired, CfiException> {
    let pc = hart.pc;
    let raw = mem.fetch(pc).map_err(|f| {
        CfiException::new(
            ExceptionCause::InstructionAccessFault,
            FaultOrigin::Fetch,
            pc,
            pc,
            f.to_string(),
        )
    })?;
    let enables = hart.enables();
    let op = decode(raw, enables).map_err(|e| illegal(pc, e.raw, e.to_string()))?;

    let mut retirement = Retirement {
        pc,
        op,
        x7_write: None,
    };
    landing_pad::check_expected(&hart.lpu, &retirement)?;

    let flow = execute(hart, mem, &op)?;

    if op.dest_reg() == Some(REG_LABEL) {
        retirement.x7_write = Some(hart.x(REG_LABEL));
    }
    hart.lpu = landing_pad::lpu_observe(&hart.lpu, &retirement, lpu_config(hart, enables.lp))
        .expect("landing-pad expectation already checked");
    hart.pc = flow.next_pc;
    hart.instret += 1;
    Ok(Retired {
        pc,
        op,
        next_pc: flow.next_pc,
        taken: flow.taken,
    })
}

/// Retired-instruction histogram.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub retired: u64,
    pub by_kind: BTreeMap<OpKind, u64>,
    /// Only CFI-tagged instructions; untagged ones are `retired - cfi_retired`.
    pub by_cfi_tag: BTreeMap<CfiTag, u64>,
}

impl Histogram {
    pub fn record(&mut self, op: &DecodedOp) {
        self.retired += 1;
        *self.by_kind.entry(op.kind).or_default() += 1;
        if op.cfi_tag.is_cfi() {
            *self.by_cfi_tag.entry(op.cfi_tag).or_default() += 1;
        }
    }

    pub fn cfi_retired(&self) -> u64 {
        self.by_cfi_tag.values().sum()
    }

    pub fn count(&self, tag: CfiTag) -> u64 {
        self.by_cfi_tag.get(&tag).copied().unwrap_or(0)
    }

    pub fn cfi_fraction(&self) -> f64 {
        if self.retired == 0 {
            0.0
        } else {
            self.cfi_retired() as f64 / self.retired as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Exited(i64),
    Fault(CfiException),
    LimitReached,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub stop: StopReason,
    pub histogram: Histogram,
}

/// Runs until exit, the first exception, or `limit` retired instructions.
pub fn run(hart: &mut HartState, mem: &mut MemoryImage, limit: u64) -> RunSummary {
    run_with(hart, mem, limit, |_| {})
}

/// [`run`] with a callback invoked for every retired instruction.
pub fn run_with(
    hart: &mut HartState,
    mem: &mut MemoryImage,
    limit: u64,
    mut observer: impl FnMut(&Retired),
) -> RunSummary {
    let mut histogram = Histogram::default();
    let stop = loop {
        if let Some(Halt::Exited(code)) = hart.halted {
            break StopReason::Exited(code);
        }
        if histogram.retired >= limit {
            break StopReason::LimitReached;
        }
        match step(hart, mem) {
            Ok(retired) => {
                histogram.record(&retired.op);
                observer(&retired);
            }
            Err(e) => break StopReason::Fault(e),
        }
    };
    RunSummary { stop, histogram }
}
