//! Program placement, simulation, and the run report.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

use super::config::{ConfigError, RunConfig};
use crate::isa::exception::{CfiException, ExceptionCause, SoftwareCheckCode};
use crate::isa::exec::{run_with, Retired, RunSummary, StopReason};
use crate::isa::hart::{HartConfig, HartState, SatpMode, REG_SP};
use crate::isa::op::{CfiTag, OpKind};
use crate::memory::{MapError, MemoryImage, PageAttr, PAGE_SIZE};
use crate::program::{analyze_size, LoadedProgram, ProgramError, SizeReport};
use crate::timing::{overhead_pct, CycleAccumulator, CycleReport};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("program: {0}")]
    Program(#[from] ProgramError),
    #[error("cannot place program: {0}")]
    Map(#[from] MapError),
    #[error("{0}")]
    Load(String),
}

/// Final state of one simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub summary: RunSummary,
    pub hart: HartState,
    pub mem: MemoryImage,
    pub cycles: Option<CycleReport>,
    /// Retired instructions, recorded only when the config asks for a trace.
    pub trace: Vec<Retired>,
}

fn page_floor(a: u64) -> u64 {
    a / PAGE_SIZE * PAGE_SIZE
}

fn page_ceil(a: u64) -> u64 {
    a.div_ceil(PAGE_SIZE) * PAGE_SIZE
}

/// Builds the memory image and initial hart state for `prog`.
pub fn prepare(
    prog: &LoadedProgram,
    cfg: &RunConfig,
) -> Result<(HartState, MemoryImage), HarnessError> {
    cfg.validate()?;
    prog.validate()?;
    let mut spans: Vec<(u64, u64)> = prog
        .segments
        .iter()
        .filter(|s| !s.bytes.is_empty())
        .map(|s| (page_floor(s.vaddr), page_ceil(s.range().end)))
        .collect();
    spans.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::new();
    for (lo, hi) in spans {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    let mut mem = MemoryImage::new();
    for (i, (lo, hi)) in merged.iter().enumerate() {
        mem.map(format!("program{i}"), *lo, hi - lo, PageAttr::Normal)?;
    }
    for seg in &prog.segments {
        mem.load(seg.vaddr, &seg.bytes)?;
    }
    let layout = &cfg.memory;
    let stack = layout.stack_range();
    mem.map(
        "stack",
        stack.start,
        stack.end - stack.start,
        PageAttr::Normal,
    )?;
    if layout.heap_size > 0 {
        mem.map("heap", layout.heap_base, layout.heap_size, PageAttr::Normal)?;
    }
    mem.map_shadow_stack(layout.shadow_stack_base, layout.shadow_stack_size)?;

    let mut hart = HartState::new(prog.entry);
    hart.set_x(REG_SP, layout.stack_top);
    hart.csr.ssp = layout.initial_ssp();
    hart.csr.set_satp_mode(SatpMode::Enabled);
    hart.set_user_cfi(cfg.enable_zicfiss, cfg.enable_zicfilp);
    hart.config = HartConfig {
        lp_protect_ret: cfg.lp_protect_ret,
    };
    Ok((hart, mem))
}

/// Runs `prog` under `cfg`, calling `observer` for every retired instruction.
pub fn simulate_with(
    prog: &LoadedProgram,
    cfg: &RunConfig,
    mut observer: impl FnMut(&Retired),
) -> Result<Simulation, HarnessError> {
    let (mut hart, mut mem) = prepare(prog, cfg)?;
    let mut acc = cfg
        .timing
        .then(|| CycleAccumulator::new(cfg.cost_table.clone()));
    let mut trace = Vec::new();
    let keep_trace = cfg.trace_path.is_some();
    let summary = run_with(&mut hart, &mut mem, cfg.limit, |r| {
        if let Some(acc) = acc.as_mut() {
            acc.feed(r);
        }
        if keep_trace {
            trace.push(*r);
        }
        observer(r);
    });
    Ok(Simulation {
        summary,
        hart,
        mem,
        cycles: acc.map(CycleAccumulator::finish),
        trace,
    })
}

pub fn simulate(prog: &LoadedProgram, cfg: &RunConfig) -> Result<Simulation, HarnessError> {
    simulate_with(prog, cfg, |_| {})
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExceptionRecord {
    pub cause: ExceptionCause,
    pub cause_code: u64,
    pub subcode: Option<SoftwareCheckCode>,
    pub tval: u64,
    pub pc: u64,
    pub cfi: bool,
    pub detail: String,
}

impl From<&CfiException> for ExceptionRecord {
    fn from(e: &CfiException) -> Self {
        ExceptionRecord {
            cause: e.cause,
            cause_code: e.cause.code(),
            subcode: e.subcode(),
            tval: e.tval,
            pc: e.pc,
            cfi: e.is_cfi(),
            detail: e.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Exited,
    CfiFault,
    Fault,
    LimitReached,
}

impl ExitKind {
    pub fn of(stop: &StopReason) -> Self {
        match stop {
            StopReason::Exited(_) => ExitKind::Exited,
            StopReason::Fault(e) if e.is_cfi() => ExitKind::CfiFault,
            StopReason::Fault(_) => ExitKind::Fault,
            StopReason::LimitReached => ExitKind::LimitReached,
        }
    }

    /// Process exit code: 0 clean, 2 CFI fault, 3 any other fault or limit.
    pub fn process_code(self) -> i32 {
        match self {
            ExitKind::Exited => 0,
            ExitKind::CfiFault => 2,
            ExitKind::Fault | ExitKind::LimitReached => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStatus {
    pub kind: ExitKind,
    /// Program exit code, when it exited.
    pub code: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub enable_zicfiss: bool,
    pub enable_zicfilp: bool,
    pub lp_protect_ret: bool,
    pub timing: bool,
    pub limit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub program: String,
    pub exit: ExitStatus,
    pub retired: u64,
    pub total_cycles: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub report: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub program: String,
    pub config: ConfigSummary,
    pub exit: ExitStatus,
    pub retired: u64,
    pub by_kind: BTreeMap<OpKind, u64>,
    /// Every CFI tag, including zero counts.
    pub by_cfi_tag: BTreeMap<CfiTag, u64>,
    pub cfi_retired: u64,
    pub cfi_fraction: f64,
    pub cycles: Option<CycleReport>,
    pub exception: Option<ExceptionRecord>,
    pub size: Option<SizeReport>,
    pub baseline: Option<BaselineSummary>,
    /// Why the baseline could not be compared, if it could not.
    pub pairing_error: Option<String>,
    pub final_ssp: u64,
    pub stdout: String,
}

const CFI_TAGS: [CfiTag; 6] = [
    CfiTag::Lpad,
    CfiTag::SsPush,
    CfiTag::SsPopChk,
    CfiTag::SsRdp,
    CfiTag::SsAmoSwapW,
    CfiTag::SsAmoSwapD,
];

impl RunReport {
    pub fn from_simulation(program: &str, cfg: &RunConfig, sim: &Simulation) -> Self {
        let h = &sim.summary.histogram;
        let mut by_kind: BTreeMap<OpKind, u64> = OpKind::ALL.iter().map(|k| (*k, 0)).collect();
        by_kind.extend(h.by_kind.iter().map(|(k, v)| (*k, *v)));
        let by_cfi_tag = CFI_TAGS.iter().map(|t| (*t, h.count(*t))).collect();
        let (code, exception) = match &sim.summary.stop {
            StopReason::Exited(c) => (Some(*c), None),
            StopReason::Fault(e) => (None, Some(ExceptionRecord::from(e))),
            StopReason::LimitReached => (None, None),
        };
        RunReport {
            report: "run",
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            program: program.to_string(),
            config: ConfigSummary {
                enable_zicfiss: cfg.enable_zicfiss,
                enable_zicfilp: cfg.enable_zicfilp,
                lp_protect_ret: cfg.lp_protect_ret,
                timing: cfg.timing,
                limit: cfg.limit,
            },
            exit: ExitStatus {
                kind: ExitKind::of(&sim.summary.stop),
                code,
            },
            retired: h.retired,
            by_kind,
            by_cfi_tag,
            cfi_retired: h.cfi_retired(),
            cfi_fraction: h.cfi_fraction(),
            cycles: sim.cycles.clone(),
            exception,
            size: None,
            baseline: None,
            pairing_error: None,
            final_ssp: sim.hart.csr.ssp,
            stdout: String::from_utf8_lossy(&sim.hart.output).into_owned(),
        }
    }

    pub fn process_code(&self) -> i32 {
        self.exit.kind.process_code()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("program".into(), self.program.clone()),
            (
                "zicfiss / zicfilp".into(),
                format!(
                    "{} / {}",
                    on_off(self.config.enable_zicfiss),
                    on_off(self.config.enable_zicfilp)
                ),
            ),
            (
                "exit".into(),
                match self.exit.code {
                    Some(c) => format!("{:?} (code {c})", self.exit.kind),
                    None => format!("{:?}", self.exit.kind),
                },
            ),
            ("retired".into(), self.retired.to_string()),
            (
                "cfi retired".into(),
                format!("{} ({:.4}%)", self.cfi_retired, self.cfi_fraction * 100.0),
            ),
        ];
        for (tag, n) in &self.by_cfi_tag {
            rows.push((format!("  {}", tag.name()), n.to_string()));
        }
        for (kind, n) in &self.by_kind {
            rows.push((format!("  {}", kind.name()), n.to_string()));
        }
        if let Some(c) = &self.cycles {
            rows.push(("cycles".into(), c.total_cycles.to_string()));
            rows.push(("cfi cycles".into(), c.cfi_cycles.to_string()));
            if let Some(p) = c.overhead_pct {
                rows.push(("cycle overhead".into(), format!("{p:.4}%")));
            }
        }
        if let Some(s) = &self.size {
            rows.push(("text bytes".into(), s.total_text_bytes.to_string()));
            rows.push(("cfi bytes".into(), s.cfi_bytes.to_string()));
            if let Some(p) = s.overhead_pct {
                rows.push(("size overhead".into(), format!("{p:.4}%")));
            }
        }
        if let Some(e) = &self.exception {
            let sub = e.subcode.map(|s| format!("/{s:?}")).unwrap_or_default();
            rows.push((
                "exception".into(),
                format!("{:?}{sub} at {:#x}", e.cause, e.pc),
            ));
            rows.push(("detail".into(), e.detail.clone()));
        }
        if let Some(p) = &self.pairing_error {
            rows.push(("pairing".into(), p.clone()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// One line per retired instruction: `pc  raw  disassembly`.
pub fn format_trace(trace: &[Retired]) -> String {
    let mut out = String::new();
    for r in trace {
        let raw = if r.op.size_bytes == 2 {
            format!("    {:04x}", r.op.raw)
        } else {
            format!("{:08x}", r.op.raw)
        };
        let _ = writeln!(out, "{:#010x}  {raw}  {}", r.pc, r.op);
    }
    out
}

/// Runs `prog` under `cfg`; with a baseline, also runs it with both
/// extensions off and fills in the paired size and cycle overheads.
pub fn execute(
    name: &str,
    prog: &LoadedProgram,
    baseline: Option<(&str, &LoadedProgram)>,
    cfg: &RunConfig,
) -> Result<(RunReport, Simulation), HarnessError> {
    let sim = simulate(prog, cfg)?;
    let mut report = RunReport::from_simulation(name, cfg, &sim);
    if let Some((base_name, base_prog)) = baseline {
        let mut base_cfg = cfg.clone();
        base_cfg.enable_zicfiss = false;
        base_cfg.enable_zicfilp = false;
        base_cfg.trace_path = None;
        let base = simulate(base_prog, &base_cfg)?;
        let base_report = RunReport::from_simulation(base_name, &base_cfg, &base);
        report.size = Some(analyze_size(name, prog, Some(base_prog)));
        if base_report.exit != report.exit {
            report.pairing_error = Some(format!(
                "exit status differs: {:?} vs baseline {:?}",
                report.exit, base_report.exit
            ));
        } else if let (Some(c), Some(b)) = (report.cycles.as_mut(), base.cycles.as_ref()) {
            c.overhead_pct = Some(overhead_pct(c.total_cycles, b.total_cycles));
        }
        report.baseline = Some(BaselineSummary {
            program: base_name.to_string(),
            exit: base_report.exit,
            retired: base_report.retired,
            total_cycles: base.cycles.as_ref().map(|c| c.total_cycles),
        });
    }
    Ok((report, sim))
}
