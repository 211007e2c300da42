//! Backward-edge protection: the shadow-stack unit (SSU).
//!
//! `sspush`/`sspopchk` are store/load-class operations tagged as shadow-stack
//! accesses. Before they reach memory, the SSU filters out two illegal
//! situations; the pop-check then compares the loaded entry with the link
//! register.

use crate::isa::exception::{CfiException, ExceptionCause, FaultOrigin, SoftwareCheckCode};
use crate::isa::hart::{CsrFile, HartState, Privilege, SatpMode};
use crate::isa::op::{CfiTag, DecodedOp};
use crate::memory::{AccessKind, MemFault, MemoryImage};

/// Bytes per shadow-stack entry. The stack grows downwards.
pub const ENTRY_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SsuRule {
    /// `ssamoswap` executed in M-mode.
    SwapInMachineMode,
    /// Any Zicfiss access below M-mode with translation disabled.
    BareTranslationBelowMachine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SsuVerdict {
    Allow,
    Fault {
        cause: ExceptionCause,
        rule: SsuRule,
    },
}

impl SsuVerdict {
    pub fn is_allowed(self) -> bool {
        self == SsuVerdict::Allow
    }

    pub fn into_result(self, pc: u64) -> Result<(), CfiException> {
        match self {
            SsuVerdict::Allow => Ok(()),
            SsuVerdict::Fault { cause, rule } => Err(CfiException::new(
                cause,
                FaultOrigin::SsuFilter,
                pc,
                pc,
                format!("shadow-stack unit filter: {rule:?}"),
            )),
        }
    }
}

/// Early filter applied to shadow-stack memory operations. Pure.
pub fn ssu_gate(op: &DecodedOp, privilege: Privilege, csr: &CsrFile) -> SsuVerdict {
    let is_swap = matches!(op.cfi_tag, CfiTag::SsAmoSwapW | CfiTag::SsAmoSwapD);
    let rule = if is_swap && privilege == Privilege::Machine {
        Some(SsuRule::SwapInMachineMode)
    } else if privilege < Privilege::Machine && csr.satp_mode() == SatpMode::Bare {
        Some(SsuRule::BareTranslationBelowMachine)
    } else {
        None
    };
    match rule {
        Some(rule) => SsuVerdict::Fault {
            cause: ExceptionCause::StoreAccessFault,
            rule,
        },
        None => SsuVerdict::Allow,
    }
}

/// Maps a memory fault of a shadow-stack access onto the exception it raises.
/// Every page-policy or alignment violation is a store access fault, even for
/// the load-class pop-check.
pub fn ss_access_fault(fault: MemFault, kind: AccessKind, pc: u64) -> CfiException {
    match fault {
        MemFault::Policy { addr, .. } => CfiException::new(
            ExceptionCause::StoreAccessFault,
            FaultOrigin::PagePolicy,
            pc,
            addr,
            fault.to_string(),
        ),
        MemFault::Misaligned { addr } => CfiException::new(
            ExceptionCause::StoreAccessFault,
            FaultOrigin::Memory,
            pc,
            addr,
            fault.to_string(),
        ),
        MemFault::Unmapped { addr } => {
            let cause = if kind == AccessKind::Read {
                ExceptionCause::LoadAccessFault
            } else {
                ExceptionCause::StoreAccessFault
            };
            CfiException::new(cause, FaultOrigin::Memory, pc, addr, fault.to_string())
        }
    }
}

/// Decrement `ssp`, then store the link register at the new top.
pub fn exec_sspush(
    hart: &mut HartState,
    mem: &mut MemoryImage,
    link_reg: u8,
) -> Result<(), CfiException> {
    let new_ssp = hart.csr.ssp.wrapping_sub(ENTRY_BYTES);
    mem.write(new_ssp, ENTRY_BYTES, hart.x(link_reg), true)
        .map_err(|f| ss_access_fault(f, AccessKind::Write, hart.pc))?;
    hart.csr.ssp = new_ssp;
    Ok(())
}

/// Load the top entry and compare it with the link register; pop on match.
pub fn exec_sspopchk(
    hart: &mut HartState,
    mem: &mut MemoryImage,
    link_reg: u8,
) -> Result<(), CfiException> {
    let ssp = hart.csr.ssp;
    let saved = mem
        .read(ssp, ENTRY_BYTES, true)
        .map_err(|f| ss_access_fault(f, AccessKind::Read, hart.pc))?;
    let link = hart.x(link_reg);
    if saved != link {
        return Err(CfiException::software_check(
            SoftwareCheckCode::ShadowStackFault,
            hart.pc,
            format!("shadow stack holds {saved:#x}, x{link_reg} holds {link:#x}"),
        ));
    }
    hart.csr.ssp = ssp.wrapping_add(ENTRY_BYTES);
    Ok(())
}

/// `rd <- ssp`, or zero when the shadow stack is not active.
pub fn exec_ssrdp(hart: &mut HartState, rd: u8) {
    let value = if hart.enables().ss { hart.csr.ssp } else { 0 };
    hart.set_x(rd, value);
}

/// Atomic swap on a shadow-stack page: `rd <- mem[rs1]; mem[rs1] <- rs2`.
pub fn exec_ssamoswap(
    hart: &mut HartState,
    mem: &mut MemoryImage,
    op: &DecodedOp,
) -> Result<(), CfiException> {
    let width = match op.cfi_tag {
        CfiTag::SsAmoSwapW => 4,
        CfiTag::SsAmoSwapD => 8,
        other => panic!("exec_ssamoswap called for {other:?}"),
    };
    let addr = hart.x(op.rs1);
    let old = mem
        .access(addr, width, AccessKind::Swap, true, hart.x(op.rs2))
        .map_err(|f| ss_access_fault(f, AccessKind::Swap, hart.pc))?;
    let old = if width == 4 {
        i64::from(old as u32 as i32) as u64
    } else {
        old
    };
    hart.set_x(op.rd, old);
    Ok(())
}
