//! Architectural state of one hart and its CSR file.

use serde::Serialize;

use super::decode::CfiEnables;
use crate::landing_pad::{Elp, LpuState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Privilege {
    User = 0,
    Supervisor = 1,
    Machine = 3,
}

impl Privilege {
    pub const ALL: [Privilege; 3] = [Privilege::User, Privilege::Supervisor, Privilege::Machine];
}

/// Address translation as seen by the shadow-stack filter. No page tables are
/// modeled; only whether translation and protection are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SatpMode {
    Bare,
    Enabled,
}

pub mod csr_addr {
    pub const SSP: u16 = 0x011;
    pub const SENVCFG: u16 = 0x10a;
    pub const SATP: u16 = 0x180;
    pub const MENVCFG: u16 = 0x30a;
    pub const MEPC: u16 = 0x341;
    pub const MCAUSE: u16 = 0x342;
    pub const MTVAL: u16 = 0x343;
    pub const HENVCFG: u16 = 0x60a;
    pub const CYCLE: u16 = 0xc00;
    pub const INSTRET: u16 = 0xc02;
}

/// Landing-pad enable bit in the `*envcfg` registers.
pub const ENVCFG_LPE: u64 = 1 << 2;
/// Shadow-stack enable bit in the `*envcfg` registers.
pub const ENVCFG_SSE: u64 = 1 << 3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsrFile {
    pub ssp: u64,
    pub menvcfg_sse: bool,
    pub senvcfg_sse: bool,
    /// Stored but not consulted: hypervisor behavior is not modeled.
    pub henvcfg_sse: bool,
    pub menvcfg_lpe: bool,
    pub senvcfg_lpe: bool,
    pub henvcfg_lpe: bool,
    pub satp_enabled: bool,
    pub mepc: u64,
    pub mcause: u64,
    pub mtval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrError {
    Unknown,
    Privilege,
    ReadOnly,
}

impl CsrFile {
    pub fn satp_mode(&self) -> SatpMode {
        if self.satp_enabled {
            SatpMode::Enabled
        } else {
            SatpMode::Bare
        }
    }

    pub fn set_satp_mode(&mut self, mode: SatpMode) {
        self.satp_enabled = mode == SatpMode::Enabled;
    }

    fn envcfg(sse: bool, lpe: bool) -> u64 {
        (if sse { ENVCFG_SSE } else { 0 }) | (if lpe { ENVCFG_LPE } else { 0 })
    }

    /// Reads a CSR at `privilege`. `cycle`/`instret` come from the caller.
    pub fn read(&self, addr: u16, privilege: Privilege, instret: u64) -> Result<u64, CsrError> {
        check_privilege(addr, privilege)?;
        use csr_addr::*;
        Ok(match addr {
            SSP => self.ssp,
            SENVCFG => Self::envcfg(self.senvcfg_sse, self.senvcfg_lpe),
            MENVCFG => Self::envcfg(self.menvcfg_sse, self.menvcfg_lpe),
            HENVCFG => Self::envcfg(self.henvcfg_sse, self.henvcfg_lpe),
            SATP => {
                if self.satp_enabled {
                    8 << 60
                } else {
                    0
                }
            }
            MEPC => self.mepc,
            MCAUSE => self.mcause,
            MTVAL => self.mtval,
            CYCLE | INSTRET => instret,
            _ => return Err(CsrError::Unknown),
        })
    }

    pub fn write(&mut self, addr: u16, privilege: Privilege, value: u64) -> Result<(), CsrError> {
        check_privilege(addr, privilege)?;
        if addr >> 10 == 0b11 {
            return Err(CsrError::ReadOnly);
        }
        use csr_addr::*;
        let sse = value & ENVCFG_SSE != 0;
        let lpe = value & ENVCFG_LPE != 0;
        match addr {
            SSP => self.ssp = value,
            SENVCFG => (self.senvcfg_sse, self.senvcfg_lpe) = (sse, lpe),
            MENVCFG => (self.menvcfg_sse, self.menvcfg_lpe) = (sse, lpe),
            HENVCFG => (self.henvcfg_sse, self.henvcfg_lpe) = (sse, lpe),
            SATP => self.satp_enabled = value >> 60 != 0,
            MEPC => self.mepc = value,
            MCAUSE => self.mcause = value,
            MTVAL => self.mtval = value,
            _ => return Err(CsrError::Unknown),
        }
        Ok(())
    }
}

fn check_privilege(addr: u16, privilege: Privilege) -> Result<(), CsrError> {
    // csr[9:8] is the lowest privilege allowed; hypervisor CSRs need HS (S here).
    let needed = match (addr >> 8) & 0b11 {
        0 => Privilege::User,
        1 | 2 => Privilege::Supervisor,
        _ => Privilege::Machine,
    };
    if privilege < needed {
        Err(CsrError::Privilege)
    } else {
        Ok(())
    }
}

/// Effective shadow-stack and landing-pad enables for `privilege`: the
/// conjunction of the enable fields owned by that level and every level above
/// it (`senvcfg` belongs to S, `menvcfg` to M). `henvcfg` is not consulted.
pub fn effective_enables(csr: &CsrFile, privilege: Privilege) -> CfiEnables {
    let levels = [
        (Privilege::Supervisor, csr.senvcfg_sse, csr.senvcfg_lpe),
        (Privilege::Machine, csr.menvcfg_sse, csr.menvcfg_lpe),
    ];
    levels
        .iter()
        .filter(|(owner, _, _)| *owner >= privilege)
        .fold(CfiEnables::ALL, |acc, (_, sse, lpe)| CfiEnables {
            ss: acc.ss && *sse,
            lp: acc.lp && *lpe,
        })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HartConfig {
    /// When set, `ret`-style jumps (`jalr x0, 0(x1|x5)`) also require a landing pad.
    pub lp_protect_ret: bool,
}

/// How the hart stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Halt {
    Exited(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HartState {
    pub pc: u64,
    xreg: [u64; 32],
    pub privilege: Privilege,
    pub csr: CsrFile,
    pub lpu: LpuState,
    pub halted: Option<Halt>,
    pub config: HartConfig,
    pub instret: u64,
    /// Bytes written to fd 1/2 by the program.
    pub output: Vec<u8>,
    /// Bytes served to `read(0, ...)`.
    pub input: Vec<u8>,
    pub input_pos: usize,
}

pub const REG_RA: u8 = 1;
pub const REG_SP: u8 = 2;
pub const REG_T0: u8 = 5;
/// Landing-pad label register.
pub const REG_LABEL: u8 = 7;

impl HartState {
    pub fn new(pc: u64) -> Self {
        HartState {
            pc,
            xreg: [0; 32],
            privilege: Privilege::User,
            csr: CsrFile::default(),
            lpu: LpuState::default(),
            halted: None,
            config: HartConfig::default(),
            instret: 0,
            output: Vec::new(),
            input: Vec::new(),
            input_pos: 0,
        }
    }

    pub fn x(&self, reg: u8) -> u64 {
        self.xreg[reg as usize]
    }

    /// Register write; writes to x0 are ignored.
    pub fn set_x(&mut self, reg: u8, value: u64) {
        if reg != 0 {
            self.xreg[reg as usize] = value;
        }
    }

    pub fn regs(&self) -> &[u64; 32] {
        &self.xreg
    }

    pub fn elp(&self) -> Elp {
        self.lpu.elp
    }

    pub fn enables(&self) -> CfiEnables {
        effective_enables(&self.csr, self.privilege)
    }

    /// Turns the CFI extensions on or off for user mode, the way a kernel would
    /// through `menvcfg`/`senvcfg`.
    pub fn set_user_cfi(&mut self, shadow_stack: bool, landing_pads: bool) {
        self.csr.menvcfg_sse = shadow_stack;
        self.csr.senvcfg_sse = shadow_stack;
        self.csr.menvcfg_lpe = landing_pads;
        self.csr.senvcfg_lpe = landing_pads;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_ignores_writes() {
        let mut h = HartState::new(0);
        h.set_x(0, 42);
        assert_eq!(h.x(0), 0);
        h.set_x(7, 42);
        assert_eq!(h.x(7), 42);
    }

    #[test]
    fn user_mode_cannot_touch_machine_csrs() {
        let mut csr = CsrFile::default();
        assert_eq!(
            csr.write(csr_addr::MENVCFG, Privilege::User, ENVCFG_SSE),
            Err(CsrError::Privilege)
        );
        assert_eq!(csr.write(csr_addr::SSP, Privilege::User, 0x8000), Ok(()));
        assert_eq!(csr.read(csr_addr::SSP, Privilege::User, 0), Ok(0x8000));
        assert_eq!(
            csr.write(csr_addr::CYCLE, Privilege::Machine, 1),
            Err(CsrError::ReadOnly)
        );
    }

    #[test]
    fn envcfg_bits_round_trip() {
        let mut csr = CsrFile::default();
        csr.write(
            csr_addr::MENVCFG,
            Privilege::Machine,
            ENVCFG_SSE | ENVCFG_LPE,
        )
        .unwrap();
        assert!(csr.menvcfg_sse && csr.menvcfg_lpe);
        assert_eq!(
            csr.read(csr_addr::MENVCFG, Privilege::Machine, 0),
            Ok(ENVCFG_SSE | ENVCFG_LPE)
        );
        csr.write(csr_addr::SATP, Privilege::Supervisor, 8 << 60)
            .unwrap();
        assert_eq!(csr.satp_mode(), SatpMode::Enabled);
    }

    #[test]
    fn enables_examples() {
        let mut csr = CsrFile::default();
        assert_eq!(effective_enables(&csr, Privilege::User), CfiEnables::NONE);
        csr.menvcfg_sse = true;
        csr.senvcfg_sse = true;
        assert!(effective_enables(&csr, Privilege::User).ss);
        csr.menvcfg_sse = false;
        assert!(!effective_enables(&csr, Privilege::User).ss);
    }
}
