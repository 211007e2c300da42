//! RV64IM core with the Zicfiss/Zicfilp hooks.

pub mod decode;
pub mod encode;
pub mod exception;
pub mod exec;
pub mod hart;
pub mod op;
pub mod opcodes;

pub use decode::{decode, CfiEnables, DecodeError};
pub use exception::{CfiException, ExceptionCause, FaultOrigin, SoftwareCheckCode};
pub use exec::{run, run_with, step, Histogram, Retired, RunSummary, StopReason};
pub use hart::{effective_enables, CsrFile, HartState, Privilege, SatpMode};
pub use op::{CfiTag, DecodedOp, Mnemonic, OpKind};

const ABI_NAMES: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

/// ABI name of an integer register.
pub fn reg_name(reg: u8) -> &'static str {
    ABI_NAMES[reg as usize & 31]
}

/// Parses `x0`..`x31`, ABI names, and `fp`.
pub fn parse_reg(name: &str) -> Option<u8> {
    let name = name.trim();
    if let Some(n) = name.strip_prefix('x') {
        if let Ok(n) = n.parse::<u8>() {
            return (n < 32).then_some(n);
        }
    }
    if name == "fp" {
        return Some(8);
    }
    ABI_NAMES.iter().position(|&n| n == name).map(|i| i as u8)
}
