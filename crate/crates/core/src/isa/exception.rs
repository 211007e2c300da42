use serde::Serialize;
use std::fmt;

/// mcause value of the software-check exception.
pub const SOFTWARE_CHECK_CAUSE: u64 = 18;
/// mtval reported for a landing-pad violation.
pub const LANDING_PAD_FAULT_TVAL: u64 = 2;
/// mtval reported for a shadow-stack violation.
pub const SHADOW_STACK_FAULT_TVAL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceptionCause {
    InstructionAccessFault,
    IllegalInstruction,
    Breakpoint,
    LoadAccessFault,
    StoreAccessFault,
    EnvironmentCall,
    SoftwareCheck,
}

impl ExceptionCause {
    pub fn code(self) -> u64 {
        match self {
            ExceptionCause::InstructionAccessFault => 1,
            ExceptionCause::IllegalInstruction => 2,
            ExceptionCause::Breakpoint => 3,
            ExceptionCause::LoadAccessFault => 5,
            ExceptionCause::StoreAccessFault => 7,
            ExceptionCause::EnvironmentCall => 8,
            ExceptionCause::SoftwareCheck => SOFTWARE_CHECK_CAUSE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftwareCheckCode {
    LandingPadFault,
    ShadowStackFault,
}

impl SoftwareCheckCode {
    pub fn tval(self) -> u64 {
        match self {
            SoftwareCheckCode::LandingPadFault => LANDING_PAD_FAULT_TVAL,
            SoftwareCheckCode::ShadowStackFault => SHADOW_STACK_FAULT_TVAL,
        }
    }
}

/// Which check produced a fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultOrigin {
    /// Landing-pad unit: missing or mismatched `lpad`.
    LandingPad,
    /// Shadow-stack pop-check compare.
    PopCheck,
    /// Shadow-stack unit early filter (M-mode swap, Bare translation below M).
    SsuFilter,
    /// Shadow-stack page attribute policy.
    PagePolicy,
    /// Unmapped or misaligned data access.
    Memory,
    Fetch,
    Decode,
    Syscall,
    Breakpoint,
}

impl FaultOrigin {
    /// Faults raised by one of the CFI checks rather than ordinary execution.
    pub fn is_cfi(self) -> bool {
        matches!(
            self,
            FaultOrigin::LandingPad
                | FaultOrigin::PopCheck
                | FaultOrigin::SsuFilter
                | FaultOrigin::PagePolicy
        )
    }
}

/// A precise exception raised by one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfiException {
    pub cause: ExceptionCause,
    subcode: Option<SoftwareCheckCode>,
    pub pc: u64,
    pub tval: u64,
    pub origin: FaultOrigin,
    pub detail: String,
}

impl CfiException {
    pub fn software_check(code: SoftwareCheckCode, pc: u64, detail: impl Into<String>) -> Self {
        let origin = match code {
            SoftwareCheckCode::LandingPadFault => FaultOrigin::LandingPad,
            SoftwareCheckCode::ShadowStackFault => FaultOrigin::PopCheck,
        };
        CfiException {
            cause: ExceptionCause::SoftwareCheck,
            subcode: Some(code),
            pc,
            tval: code.tval(),
            origin,
            detail: detail.into(),
        }
    }

    /// Any non-software-check exception. Panics if handed `SoftwareCheck`,
    /// which always needs a subcode.
    pub fn new(
        cause: ExceptionCause,
        origin: FaultOrigin,
        pc: u64,
        tval: u64,
        detail: impl Into<String>,
    ) -> Self {
        assert!(
            cause != ExceptionCause::SoftwareCheck,
            "software-check exceptions need a subcode"
        );
        CfiException {
            cause,
            subcode: None,
            pc,
            tval,
            origin,
            detail: detail.into(),
        }
    }

    pub fn subcode(&self) -> Option<SoftwareCheckCode> {
        self.subcode
    }

    pub fn is_cfi(&self) -> bool {
        self.origin.is_cfi()
    }

    pub fn is_software_check(&self, code: SoftwareCheckCode) -> bool {
        self.subcode == Some(code)
    }
}

impl fmt::Display for CfiException {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.cause)?;
        if let Some(code) = self.subcode {
            write!(f, "/{code:?}")?;
        }
        write!(f, " at pc={:#x}: {}", self.pc, self.detail)
    }
}

impl std::error::Error for CfiException {}
