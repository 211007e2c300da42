//! Forward-edge protection: the landing-pad unit (LPU).
//!
//! The LPU watches instructions in retirement order. A retiring write to `x7`
//! records the label the program configured; a retiring indirect jump moves
//! the hart into the expected-landing-pad state, in which only an `lpad` with
//! a matching (or wildcard) label may retire next.

use crate::isa::exception::{CfiException, SoftwareCheckCode};
use crate::isa::hart::{REG_RA, REG_T0};
use crate::isa::op::{CfiTag, DecodedOp};

/// Bit position of the label inside `x7` and inside the `lpad` immediate.
pub const LABEL_SHIFT: u32 = 12;
/// Label width in bits.
pub const LABEL_WIDTH: u32 = 20;

const LABEL_MASK: u64 = (1 << LABEL_WIDTH) - 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Elp {
    #[default]
    NoLpExpected,
    LpExpected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LpuState {
    pub elp: Elp,
    /// `x7` as last seen at retire.
    pub last_x7: u64,
}

impl LpuState {
    pub fn expected_label(&self) -> u32 {
        extract_label(self.last_x7)
    }

    /// State after a trap: the expectation is dropped, the label shadow kept.
    pub fn after_trap(self) -> Self {
        LpuState {
            elp: Elp::NoLpExpected,
            ..self
        }
    }
}

pub fn extract_label(x7: u64) -> u32 {
    ((x7 >> LABEL_SHIFT) & LABEL_MASK) as u32
}

/// Label 0 in an `lpad` accepts any expected label.
pub fn match_label(lpad_label: u32, expected_label: u32) -> bool {
    lpad_label == 0 || lpad_label == expected_label
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpuConfig {
    pub lp_enabled: bool,
    pub protect_ret: bool,
}

/// One retiring instruction as the LPU sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retirement {
    pub pc: u64,
    pub op: DecodedOp,
    /// Value written to `x7`, when this instruction writes it.
    pub x7_write: Option<u64>,
}

/// `jalr x0, 0(ra|t0)` and its compressed form: a function return.
pub fn is_return(op: &DecodedOp) -> bool {
    op.is_indirect_jump() && op.rd == 0 && (op.rs1 == REG_RA || op.rs1 == REG_T0)
}

fn arms_landing_pad(op: &DecodedOp, cfg: LpuConfig) -> bool {
    cfg.lp_enabled && op.is_indirect_jump() && (cfg.protect_ret || !is_return(op))
}

fn violation(r: &Retirement, expected: u32) -> CfiException {
    let detail = if r.op.cfi_tag == CfiTag::Lpad {
        format!(
            "lpad label {:#x} does not match expected label {expected:#x}",
            r.op.lpad_label()
        )
    } else {
        format!("indirect jump landed on `{}` instead of lpad", r.op)
    };
    CfiException::software_check(SoftwareCheckCode::LandingPadFault, r.pc, detail)
}

/// Check that must pass before the instruction's side effects commit.
pub fn check_expected(state: &LpuState, r: &Retirement) -> Result<(), CfiException> {
    if state.elp == Elp::LpExpected {
        let expected = state.expected_label();
        let ok = r.op.cfi_tag == CfiTag::Lpad && match_label(r.op.lpad_label(), expected);
        if !ok {
            return Err(violation(r, expected));
        }
    }
    Ok(())
}

/// Applies one retiring instruction to the LPU state.
pub fn lpu_observe(
    state: &LpuState,
    r: &Retirement,
    cfg: LpuConfig,
) -> Result<LpuState, CfiException> {
    check_expected(state, r)?;
    let mut next = *state;
    next.elp = Elp::NoLpExpected;
    if let Some(v) = r.x7_write {
        next.last_x7 = v;
    }
    if arms_landing_pad(&r.op, cfg) {
        next.elp = Elp::LpExpected;
    }
    Ok(next)
}

/// Result of one commit cycle through the LPU chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainResult {
    /// State leaving the last unit (ELP cleared if a fault was raised).
    pub state: LpuState,
    /// Commit port whose instruction faulted, with the exception.
    pub fault: Option<(usize, CfiException)>,
}

/// Signals a unit hands to the next unit in the chain.
#[derive(Debug, Clone, Copy)]
struct UnitOut {
    elp: Elp,
    label_reg: u64,
}

fn lpu_unit(input: UnitOut, r: &Retirement, cfg: LpuConfig) -> Result<UnitOut, CfiException> {
    let expected_hit = input.elp == Elp::LpExpected;
    let is_lpad = r.op.cfi_tag == CfiTag::Lpad;
    if expected_hit && !(is_lpad && match_label(r.op.lpad_label(), extract_label(input.label_reg)))
    {
        return Err(violation(r, extract_label(input.label_reg)));
    }
    let label_reg = r.x7_write.unwrap_or(input.label_reg);
    let elp = if arms_landing_pad(&r.op, cfg) {
        Elp::LpExpected
    } else {
        Elp::NoLpExpected
    };
    Ok(UnitOut { elp, label_reg })
}

/// Two-port commit: port 0 holds the older instruction. Each unit forwards
/// the label-register update and the expectation it leaves behind to the
/// next one, so a jump and its landing pad can retire in the same cycle.
pub fn lpu_chain(
    state: &LpuState,
    port0: &Retirement,
    port1: Option<&Retirement>,
    cfg: LpuConfig,
) -> ChainResult {
    let mut signals = UnitOut {
        elp: state.elp,
        label_reg: state.last_x7,
    };
    for (port, r) in std::iter::once(port0).chain(port1).enumerate() {
        match lpu_unit(signals, r, cfg) {
            Ok(out) => signals = out,
            Err(e) => {
                return ChainResult {
                    state: LpuState {
                        elp: Elp::NoLpExpected,
                        last_x7: signals.label_reg,
                    },
                    fault: Some((port, e)),
                }
            }
        }
    }
    ChainResult {
        state: LpuState {
            elp: signals.elp,
            last_x7: signals.label_reg,
        },
        fault: None,
    }
}
