//! User-level RV64 simulator with the RISC-V control-flow-integrity
//! extensions: `Zicfiss` shadow stacks and `Zicfilp` landing pads.
//!
//! The crate is split along the hardware it models: [`isa`] is the hart and
//! its execute loop, [`shadow_stack`] and [`landing_pad`] hold the semantics
//! of the two CFI units, [`memory`] enforces the shadow-stack page policy and
//! [`timing`] attributes cycles to instruction classes. [`program`] loads
//! and analyzes code; [`harness`] drives runs, attacks and benchmarks.

pub mod harness;
pub mod isa;
pub mod landing_pad;
pub mod memory;
pub mod program;
pub mod shadow_stack;
pub mod timing;
