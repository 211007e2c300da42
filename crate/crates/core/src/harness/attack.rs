//! Built-in code-reuse attack scenarios.
//!
//! Each scenario corrupts one piece of control data and steers execution to a
//! `gadget` label. It is run twice: with both extensions off the gadget must
//! retire, and with both on the run must stop at the expected software-check
//! exception before the gadget retires.

use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use super::config::RunConfig;
use super::runner::{format_trace, simulate_with, ExceptionRecord, HarnessError};
use crate::isa::exception::{ExceptionCause, SoftwareCheckCode};
use crate::isa::exec::StopReason;
use crate::program::{asm::DEFAULT_TEXT_BASE, assemble_program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    RopRetOverwrite,
    JopMissingLpad,
    JopLabelMismatch,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::RopRetOverwrite,
        Scenario::JopMissingLpad,
        Scenario::JopLabelMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::RopRetOverwrite => "rop-ret-overwrite",
            Scenario::JopMissingLpad => "jop-missing-lpad",
            Scenario::JopLabelMismatch => "jop-label-mismatch",
        }
    }

    pub fn expected(self) -> SoftwareCheckCode {
        match self {
            Scenario::RopRetOverwrite => SoftwareCheckCode::ShadowStackFault,
            _ => SoftwareCheckCode::LandingPadFault,
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Scenario::RopRetOverwrite => ROP_RET_OVERWRITE,
            Scenario::JopMissingLpad => JOP_MISSING_LPAD,
            Scenario::JopLabelMismatch => JOP_LABEL_MISMATCH,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

const ROP_RET_OVERWRITE: &str = r#"
# A stack overflow in `victim` replaces its saved return address.
_start:
    call victim
    li a0, 0
    li a7, 93
    ecall

victim:
    addi sp, sp, -16
    sd ra, 8(sp)
    sspush ra
    la t1, gadget          # attacker-controlled bytes land on the stack
    sd t1, 8(sp)
    ld ra, 8(sp)
    addi sp, sp, 16
    sspopchk ra
    ret

gadget:
    li a0, 66
    li a7, 93
    ecall
"#;

const JOP_MISSING_LPAD: &str = r#"
# A corrupted function pointer targets code that has no landing pad.
_start:
    la t1, handler
    la t1, gadget          # overwritten pointer
    lui t2, 0
    jalr t1
    li a0, 0
    li a7, 93
    ecall

handler:
    lpad 0
    ret

gadget:
    li a0, 66
    li a7, 93
    ecall
"#;

const JOP_LABEL_MISMATCH: &str = r#"
# A corrupted function pointer targets a function of a different type.
_start:
    la t1, handler
    la t1, gadget          # overwritten pointer
    lui t2, 0x1            # call site expects label 1
    jalr t1
    li a0, 0
    li a7, 93
    ecall

handler:
    lpad 0x1
    ret

gadget:
    lpad 0x2
    li a0, 66
    li a7, 93
    ecall
"#;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfOutcome {
    pub protections: bool,
    pub gadget_reached: bool,
    pub stop: String,
    pub exception: Option<ExceptionRecord>,
    pub retired: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackVerdict {
    pub scenario: Scenario,
    pub expected: SoftwareCheckCode,
    pub unprotected: HalfOutcome,
    pub protected: HalfOutcome,
    pub pass: bool,
    /// Full instruction traces of both halves, present only on failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

fn run_half(
    scenario: Scenario,
    base: &RunConfig,
    protections: bool,
) -> Result<(HalfOutcome, String), HarnessError> {
    let asm = assemble_program(scenario.source(), DEFAULT_TEXT_BASE)
        .map_err(|e| HarnessError::Load(format!("{scenario}: {e}")))?;
    let gadget = asm.symbols["gadget"];
    let prog = asm.into_program();
    let mut cfg = base.clone();
    cfg.enable_zicfiss = protections;
    cfg.enable_zicfilp = protections;
    cfg.trace_path = Some("<attack>".into());
    let mut reached = false;
    let sim = simulate_with(&prog, &cfg, |r| reached |= r.pc == gadget)?;
    let stop = match &sim.summary.stop {
        StopReason::Exited(c) => format!("exited({c})"),
        StopReason::Fault(e) => format!("fault: {e}"),
        StopReason::LimitReached => "limit reached".to_string(),
    };
    let exception = match &sim.summary.stop {
        StopReason::Fault(e) => Some(ExceptionRecord::from(e)),
        _ => None,
    };
    Ok((
        HalfOutcome {
            protections,
            gadget_reached: reached,
            stop,
            exception,
            retired: sim.summary.histogram.retired,
        },
        format_trace(&sim.trace),
    ))
}

pub fn run_attack(scenario: Scenario, base: &RunConfig) -> Result<AttackVerdict, HarnessError> {
    let (unprotected, trace_off) = run_half(scenario, base, false)?;
    let (protected, trace_on) = run_half(scenario, base, true)?;
    let expected = scenario.expected();
    let blocked = !protected.gadget_reached
        && protected.exception.as_ref().is_some_and(|e| {
            e.cause == ExceptionCause::SoftwareCheck && e.subcode == Some(expected)
        });
    let pass = unprotected.gadget_reached && blocked;
    let trace = (!pass)
        .then(|| format!("-- protections off --\n{trace_off}-- protections on --\n{trace_on}"));
    Ok(AttackVerdict {
        scenario,
        expected,
        unprotected,
        protected,
        pass,
        trace,
    })
}
