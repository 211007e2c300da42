//! Cost-table timing model of an in-order, single-issue pipeline with a
//! two-port commit stage.
//!
//! Each retired instruction is charged its class cost from a [`CostTable`];
//! taken control transfers pay a front-end refill penalty, back-to-back
//! pop-checks serialize on the single in-flight check, and with dual commit
//! enabled an `lpad` can retire alongside the preceding instruction.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::isa::exec::Retired;
use crate::isa::op::{CfiTag, DecodedOp, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub alu: u32,
    pub load: u32,
    pub store: u32,
    pub branch: u32,
    pub jal: u32,
    pub jalr: u32,
    pub csr: u32,
    pub system: u32,
    pub amo: u32,
    pub lpad: u32,
    pub sspush: u32,
    pub sspopchk: u32,
    pub ssrdp: u32,
    pub ssamoswap: u32,
    /// Extra cycles for every taken branch or jump.
    pub branch_penalty: u32,
    /// Extra cycles when an `sspopchk` retires right after another one.
    pub popchk_stall: u32,
    pub dual_commit: bool,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            alu: 1,
            load: 2,
            store: 2,
            branch: 1,
            jal: 1,
            jalr: 1,
            csr: 1,
            system: 1,
            amo: 2,
            lpad: 1,
            sspush: 2,
            sspopchk: 2,
            ssrdp: 1,
            ssamoswap: 2,
            branch_penalty: 5,
            popchk_stall: 1,
            dual_commit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostTableError {
    #[error("cost for `{0}` must be at least 1 cycle")]
    ZeroCost(&'static str),
    #[error("invalid cost table: {0}")]
    Parse(String),
}

/// Cost-table keys as they appear in a config file. Omitted keys keep their
/// defaults, except that `sspush`/`sspopchk`/`ssamoswap` follow
/// `store`/`load`/`amo` unless given explicitly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverrides {
    pub alu: Option<u32>,
    pub load: Option<u32>,
    pub store: Option<u32>,
    pub branch: Option<u32>,
    pub jal: Option<u32>,
    pub jalr: Option<u32>,
    pub csr: Option<u32>,
    pub system: Option<u32>,
    pub amo: Option<u32>,
    pub lpad: Option<u32>,
    pub sspush: Option<u32>,
    pub sspopchk: Option<u32>,
    pub ssrdp: Option<u32>,
    pub ssamoswap: Option<u32>,
    pub branch_penalty: Option<u32>,
    pub popchk_stall: Option<u32>,
    pub dual_commit: Option<bool>,
}

impl CostTable {
    pub fn with_overrides(o: &CostOverrides) -> Result<Self, CostTableError> {
        let d = CostTable::default();
        let load = o.load.unwrap_or(d.load);
        let store = o.store.unwrap_or(d.store);
        let amo = o.amo.unwrap_or(d.amo);
        let table = CostTable {
            alu: o.alu.unwrap_or(d.alu),
            load,
            store,
            branch: o.branch.unwrap_or(d.branch),
            jal: o.jal.unwrap_or(d.jal),
            jalr: o.jalr.unwrap_or(d.jalr),
            csr: o.csr.unwrap_or(d.csr),
            system: o.system.unwrap_or(d.system),
            amo,
            lpad: o.lpad.unwrap_or(d.lpad),
            sspush: o.sspush.unwrap_or(store),
            sspopchk: o.sspopchk.unwrap_or(load),
            ssrdp: o.ssrdp.unwrap_or(d.ssrdp),
            ssamoswap: o.ssamoswap.unwrap_or(amo),
            branch_penalty: o.branch_penalty.unwrap_or(d.branch_penalty),
            popchk_stall: o.popchk_stall.unwrap_or(d.popchk_stall),
            dual_commit: o.dual_commit.unwrap_or(d.dual_commit),
        };
        table.validate()?;
        Ok(table)
    }

    /// Parses a TOML document holding the cost keys, either at top level or
    /// under a `[timing]` section.
    pub fn from_toml(text: &str) -> Result<Self, CostTableError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wrapped {
            timing: CostOverrides,
        }
        let parse_err = |e: toml::de::Error| CostTableError::Parse(e.message().to_string());
        let overrides = match toml::from_str::<Wrapped>(text) {
            Ok(w) => w.timing,
            Err(_) => toml::from_str::<CostOverrides>(text).map_err(parse_err)?,
        };
        Self::with_overrides(&overrides)
    }

    pub fn validate(&self) -> Result<(), CostTableError> {
        let entries = [
            ("alu", self.alu),
            ("load", self.load),
            ("store", self.store),
            ("branch", self.branch),
            ("jal", self.jal),
            ("jalr", self.jalr),
            ("csr", self.csr),
            ("system", self.system),
            ("amo", self.amo),
            ("lpad", self.lpad),
            ("sspush", self.sspush),
            ("sspopchk", self.sspopchk),
            ("ssrdp", self.ssrdp),
            ("ssamoswap", self.ssamoswap),
        ];
        match entries.iter().find(|(_, c)| *c == 0) {
            Some((name, _)) => Err(CostTableError::ZeroCost(name)),
            None => Ok(()),
        }
    }

    pub fn kind_cost(&self, kind: OpKind) -> u32 {
        match kind {
            OpKind::Alu => self.alu,
            OpKind::Load => self.load,
            OpKind::Store => self.store,
            OpKind::Branch => self.branch,
            OpKind::Jal => self.jal,
            OpKind::Jalr => self.jalr,
            OpKind::Csr => self.csr,
            OpKind::System => self.system,
            OpKind::Amo => self.amo,
        }
    }

    pub fn cfi_cost(&self, tag: CfiTag) -> Option<u32> {
        match tag {
            CfiTag::None => None,
            CfiTag::Lpad => Some(self.lpad),
            CfiTag::SsPush => Some(self.sspush),
            CfiTag::SsPopChk => Some(self.sspopchk),
            CfiTag::SsRdp => Some(self.ssrdp),
            CfiTag::SsAmoSwapW | CfiTag::SsAmoSwapD => Some(self.ssamoswap),
        }
    }
}

/// Static cost of one instruction, before dynamic penalties.
pub fn cost_of(op: &DecodedOp, table: &CostTable) -> u32 {
    table
        .cfi_cost(op.cfi_tag)
        .unwrap_or_else(|| table.kind_cost(op.kind))
}

fn class_name(op: &DecodedOp) -> &'static str {
    if op.cfi_tag.is_cfi() {
        op.cfi_tag.name()
    } else {
        op.kind.name()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CycleReport {
    pub total_cycles: u64,
    pub cycles_by_class: BTreeMap<String, u64>,
    pub cfi_cycles: u64,
    /// Relative cycle increase over a paired baseline, in percent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overhead_pct: Option<f64>,
}

/// Streaming cycle accumulator; feed it retired instructions in order.
#[derive(Debug, Clone)]
pub struct CycleAccumulator {
    table: CostTable,
    report: CycleReport,
    prev_tag: Option<CfiTag>,
    prev_dual: bool,
}

impl CycleAccumulator {
    pub fn new(table: CostTable) -> Self {
        CycleAccumulator {
            table,
            report: CycleReport::default(),
            prev_tag: None,
            prev_dual: false,
        }
    }

    pub fn feed(&mut self, r: &Retired) {
        let tag = r.op.cfi_tag;
        let mut cycles = u64::from(cost_of(&r.op, &self.table));
        if r.taken {
            cycles += u64::from(self.table.branch_penalty);
        }
        if tag == CfiTag::SsPopChk && self.prev_tag == Some(CfiTag::SsPopChk) {
            cycles += u64::from(self.table.popchk_stall);
        }
        // Second commit port: an lpad shares the cycle of the instruction
        // ahead of it, unless that one already used the second port.
        let dual = self.table.dual_commit
            && tag == CfiTag::Lpad
            && self.prev_tag.is_some()
            && !self.prev_dual;
        if dual {
            cycles = 0;
        }
        self.prev_dual = dual;
        self.prev_tag = Some(tag);

        self.report.total_cycles += cycles;
        *self
            .report
            .cycles_by_class
            .entry(class_name(&r.op).to_string())
            .or_default() += cycles;
        if tag.is_cfi() {
            self.report.cfi_cycles += cycles;
        }
    }

    pub fn report(&self) -> &CycleReport {
        &self.report
    }

    pub fn finish(self) -> CycleReport {
        self.report
    }
}

pub fn accumulate(trace: &[Retired], table: &CostTable) -> CycleReport {
    let mut acc = CycleAccumulator::new(table.clone());
    for r in trace {
        acc.feed(r);
    }
    acc.finish()
}

/// Percentage increase of `measured` over `baseline`.
pub fn overhead_pct(measured: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        (measured as f64 - baseline as f64) / baseline as f64 * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("runs cannot be paired: {0}")]
pub struct PairingError(pub String);

/// Fills `cfi.overhead_pct` against `baseline`. Both runs must have ended
/// the same way (`outcome_cfi == outcome_base`).
pub fn pair<T: PartialEq + std::fmt::Debug>(
    cfi: &mut CycleReport,
    baseline: &CycleReport,
    outcome_cfi: &T,
    outcome_base: &T,
) -> Result<f64, PairingError> {
    if outcome_cfi != outcome_base {
        return Err(PairingError(format!(
            "exit status differs ({outcome_cfi:?} vs {outcome_base:?})"
        )));
    }
    let pct = overhead_pct(cfi.total_cycles, baseline.total_cycles);
    cfi.overhead_pct = Some(pct);
    Ok(pct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode::{decode, CfiEnables};

    fn retired(raw: u32, taken: bool) -> Retired {
        Retired {
            pc: 0,
            op: decode(raw, CfiEnables::ALL).unwrap(),
            next_pc: 4,
            taken,
        }
    }

    const NOP: u32 = 0x13;
    const LPAD: u32 = 0x17;
    const SSPUSH: u32 = 0xce10_4073;
    const SSPOPCHK: u32 = 0xcdc0_c073;
    const JAL: u32 = 0x0080_00ef;

    #[test]
    fn default_costs() {
        let t = CostTable::default();
        assert_eq!(cost_of(&retired(LPAD, false).op, &t), 1);
        assert_eq!(cost_of(&retired(NOP, false).op, &t), 1);
        assert_eq!(cost_of(&retired(SSPUSH, false).op, &t), t.store);
    }

    #[test]
    fn shadow_ops_follow_memory_costs() {
        let o = CostOverrides {
            store: Some(3),
            load: Some(4),
            ..Default::default()
        };
        let t = CostTable::with_overrides(&o).unwrap();
        assert_eq!((t.sspush, t.sspopchk), (3, 4));
        let o = CostOverrides {
            store: Some(3),
            sspush: Some(7),
            ..Default::default()
        };
        assert_eq!(CostTable::with_overrides(&o).unwrap().sspush, 7);
    }

    #[test]
    fn ten_alu_ops() {
        let trace: Vec<_> = (0..10).map(|_| retired(NOP, false)).collect();
        let r = accumulate(&trace, &CostTable::default());
        assert_eq!(r.total_cycles, 10);
        assert_eq!(r.cfi_cycles, 0);
    }

    #[test]
    fn taken_penalty_and_popchk_stall() {
        let t = CostTable::default();
        let trace = [
            retired(JAL, true),
            retired(SSPOPCHK, false),
            retired(SSPOPCHK, false),
        ];
        let r = accumulate(&trace, &t);
        assert_eq!(r.total_cycles, 6 + 2 + 3);
        assert_eq!(r.cfi_cycles, 5);
        assert_eq!(r.cycles_by_class["sspopchk"], 5);
    }

    #[test]
    fn dual_commit_pairs_lpad() {
        let t = CostTable {
            dual_commit: true,
            ..Default::default()
        };
        let trace = [
            retired(NOP, false),
            retired(LPAD, false),
            retired(LPAD, false),
        ];
        let r = accumulate(&trace, &t);
        // first lpad shares the nop's cycle, the second cannot
        assert_eq!(r.total_cycles, 2);
    }

    #[test]
    fn zero_cost_and_unknown_keys_rejected() {
        let o = CostOverrides {
            alu: Some(0),
            ..Default::default()
        };
        assert_eq!(
            CostTable::with_overrides(&o),
            Err(CostTableError::ZeroCost("alu"))
        );
        assert!(CostTable::from_toml("[timing]\nfpu = 3\n").is_err());
        assert!(CostTable::from_toml("bogus = 3\n").is_err());
        let t = CostTable::from_toml("[timing]\nload = 3\n").unwrap();
        assert_eq!(t.sspopchk, 3);
        let t = CostTable::from_toml("lpad = 2\n").unwrap();
        assert_eq!(t.lpad, 2);
    }

    #[test]
    fn pairing_requires_same_outcome() {
        let mut a = CycleReport {
            total_cycles: 110,
            ..Default::default()
        };
        let b = CycleReport {
            total_cycles: 100,
            ..Default::default()
        };
        assert!(pair(&mut a, &b, &1, &2).is_err());
        let pct = pair(&mut a, &b, &0, &0).unwrap();
        assert_eq!(pct, overhead_pct(110, 100));
        assert_eq!(a.overhead_pct, Some(pct));
    }
}
