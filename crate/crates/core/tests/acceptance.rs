//! Acceptance criteria 1-8. Each criterion prints one PASS/FAIL line with
//! its runtime; the test fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use cfisim::harness::genbench::{call_heavy, indirect_heavy, leaf_heavy, random_tree, CallTree};
use cfisim::harness::{
    execute, run_attack, simulate, Instrumentation, RunConfig, Scenario, Simulation,
};
use cfisim::isa::decode::{decode, CfiEnables};
use cfisim::isa::hart::{CsrFile, SatpMode};
use cfisim::isa::{CfiTag, ExceptionCause, Privilege, SoftwareCheckCode, StopReason};
use cfisim::landing_pad::{Elp, LpuConfig, LpuState};
use cfisim::program::{analyze_size, LoadedProgram};
use cfisim::shadow_stack::ssu_gate;
use cfisim::timing::CostTable;
use common::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn full_cfg(table: CostTable) -> RunConfig {
    RunConfig {
        enable_zicfiss: true,
        enable_zicfilp: true,
        timing: true,
        cost_table: table,
        ..RunConfig::default()
    }
}

fn off_cfg(table: CostTable) -> RunConfig {
    RunConfig {
        enable_zicfiss: false,
        enable_zicfilp: false,
        ..full_cfg(table)
    }
}

fn sim(prog: &LoadedProgram, cfg: &RunConfig) -> Result<Simulation, String> {
    simulate(prog, cfg).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 1

fn attacks() -> Outcome {
    let mut names = Vec::new();
    for s in Scenario::ALL {
        let v = run_attack(s, &RunConfig::default()).map_err(|e| e.to_string())?;
        let want = match s {
            Scenario::RopRetOverwrite => SoftwareCheckCode::ShadowStackFault,
            Scenario::JopMissingLpad | Scenario::JopLabelMismatch => {
                SoftwareCheckCode::LandingPadFault
            }
        };
        ensure(v.unprotected.gadget_reached, || {
            format!("{s}: gadget not reached unprotected")
        })?;
        ensure(!v.protected.gadget_reached, || {
            format!("{s}: gadget reached when protected")
        })?;
        let e = v
            .protected
            .exception
            .as_ref()
            .ok_or(format!("{s}: no exception"))?;
        ensure(
            e.cause == ExceptionCause::SoftwareCheck
                && e.cause_code == 18
                && e.subcode == Some(want),
            || format!("{s}: stopped by {e:?}"),
        )?;
        ensure(v.pass, || format!("{s}: verdict FAIL"))?;
        names.push(s.name());
    }
    Ok(format!("blocked {}", names.join(", ")))
}

// ---------------------------------------------------------------- 2

/// Compares every mapped byte of two runs outside `skip`.
fn same_memory(
    a: &Simulation,
    b: &Simulation,
    skip: &[std::ops::Range<u64>],
) -> Result<(), String> {
    let (ra, rb) = (a.mem.regions(), b.mem.regions());
    ensure(ra.len() == rb.len(), || "different memory maps".into())?;
    for (x, y) in ra.iter().zip(rb) {
        ensure(x.base == y.base && x.bytes.len() == y.bytes.len(), || {
            format!("region {} differs in placement", x.name)
        })?;
        let mut cuts = vec![x.base, x.end()];
        for r in skip {
            cuts.push(r.start.clamp(x.base, x.end()));
            cuts.push(r.end.clamp(x.base, x.end()));
        }
        cuts.sort_unstable();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi || skip.iter().any(|r| r.contains(&lo)) {
                continue;
            }
            let span = (lo - x.base) as usize..(hi - x.base) as usize;
            ensure(x.bytes[span.clone()] == y.bytes[span], || {
                format!("memory differs in {:#x}..{:#x}", lo, hi)
            })?;
        }
    }
    Ok(())
}

fn transparency() -> Outcome {
    const TREES: u64 = 120;
    let layout = RunConfig::default().memory;
    let mut checked = 0;
    let mut total_cfi = 0;
    for seed in 0..TREES {
        let functions = 1 + (seed as usize * 7) % 24;
        let tree = random_tree(seed, functions, 1 + seed % 5).map_err(|e| e.to_string())?;
        let on_prog = program(&tree.emit(Instrumentation::FULL, false));
        let off_prog = program(&tree.emit(Instrumentation::FULL, true));
        let base_prog = program(&tree.emit(Instrumentation::NONE, false));
        let on = sim(&on_prog, &full_cfg(CostTable::default()))?;
        let off = sim(&off_prog, &off_cfg(CostTable::default()))?;
        let base = sim(&base_prog, &off_cfg(CostTable::default()))?;
        for (name, s) in [("cfi-on", &on), ("cfi-off", &off), ("baseline", &base)] {
            ensure(s.summary.stop == StopReason::Exited(0), || {
                format!("seed {seed}: {name} run stopped with {:?}", s.summary.stop)
            })?;
        }
        ensure(
            on.hart.regs() == off.hart.regs() && on.hart.pc == off.hart.pc,
            || format!("seed {seed}: registers differ"),
        )?;
        let mut skip = on_prog.text_ranges.clone();
        skip.push(layout.shadow_stack_range());
        same_memory(&on, &off, &skip).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(
            on.summary.histogram.retired == off.summary.histogram.retired,
            || format!("seed {seed}: retired counts differ"),
        )?;
        // The uninstrumented build computes the same result.
        let result = |p: &LoadedProgram, s: &Simulation| s.mem.peek(p.symbol("result").unwrap(), 8);
        ensure(result(&on_prog, &on) == result(&base_prog, &base), || {
            format!("seed {seed}: result differs from the uninstrumented build")
        })?;
        ensure(on.hart.x(18) == base.hart.x(18), || {
            format!("seed {seed}: s2 differs")
        })?;
        total_cfi += on.summary.histogram.cfi_retired();
        checked += 1;
    }
    Ok(format!(
        "{checked} trees identical, {total_cfi} CFI instructions retired, 0 faults"
    ))
}

// ---------------------------------------------------------------- 3

fn policy_matrix() -> Outcome {
    let mut cases = 0;
    let mut rng = 0x5eed_0003u64;
    for (op, zicfiss, width) in POLICY_OPS {
        for (page, shadow) in [(SHADOW, true), (DATA, false)] {
            let mut offsets = vec![0, 0x1000 - width, 0x800];
            offsets.extend((0..32).map(|_| xorshift(&mut rng)));
            for off in offsets {
                let got = policy_access(op, page, off);
                let want = policy_expected(zicfiss, shadow);
                ensure(got == want, || {
                    format!(
                        "{op} on {} page: {got:?}, want {want:?}",
                        if shadow { "shadow" } else { "normal" }
                    )
                })?;
                cases += 1;
            }
        }
    }
    let ops = [
        (sspush(1), false),
        (sspush(5), false),
        (sspopchk(1), false),
        (sspopchk(5), false),
        (c_mop(1), false),
        (c_mop(5), false),
        (ssamoswap(false, 1, 2, 3), true),
        (ssamoswap(true, 1, 2, 3), true),
    ];
    for (word, swap) in ops {
        let op = decode(word, CfiEnables::ALL).map_err(|e| e.to_string())?;
        for p in Privilege::ALL {
            for satp in [SatpMode::Bare, SatpMode::Enabled] {
                let mut csr = CsrFile::default();
                csr.set_satp_mode(satp);
                let want = (swap && p == Privilege::Machine)
                    || (p < Privilege::Machine && satp == SatpMode::Bare);
                let v = ssu_gate(&op, p, &csr);
                ensure(v.is_allowed() != want, || {
                    format!("{op} at {p:?}/{satp:?}: {v:?}")
                })?;
                if let Err(e) = v.into_result(0) {
                    ensure(e.cause == ExceptionCause::StoreAccessFault, || {
                        format!("{op}: filter raised {:?}", e.cause)
                    })?;
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} access and filter cases match"))
}

// ---------------------------------------------------------------- 4

fn chain_equivalence() -> Outcome {
    const STREAMS: usize = 100_000;
    let configs = [
        LpuConfig {
            lp_enabled: true,
            protect_ret: false,
        },
        LpuConfig {
            lp_enabled: true,
            protect_ret: true,
        },
        LpuConfig {
            lp_enabled: false,
            protect_ret: false,
        },
    ];
    let mut rng = 0xc4a1_0004u64;
    let mut faults = 0;
    for n in 0..STREAMS {
        let len = 1 + (xorshift(&mut rng) % 16) as usize;
        let stream = random_stream(&mut rng, len);
        let start = LpuState {
            elp: if xorshift(&mut rng).is_multiple_of(3) {
                Elp::LpExpected
            } else {
                Elp::NoLpExpected
            },
            last_x7: (xorshift(&mut rng) % 4) << 12,
        };
        let cfg = configs[n % configs.len()];
        let single = fold_single(start, &stream, cfg);
        let dual = fold_dual(start, &stream, cfg);
        ensure(single == dual, || {
            format!("stream {n}: single {single:?} vs dual {dual:?}")
        })?;
        faults += usize::from(single.0.is_some());
    }
    Ok(format!(
        "{STREAMS} streams identical ({faults} with a fault)"
    ))
}

// ---------------------------------------------------------------- 5

/// Dynamic CFI counts of a tree worked out from its shape alone:
/// `(lpad, sspush, sspopchk)`.
fn closed_form(tree: &CallTree) -> (u64, u64, u64) {
    let n = tree.functions.len();
    let mut calls = vec![0u64; n];
    fn visit(tree: &CallTree, f: usize, times: u64, calls: &mut [u64]) {
        calls[f] += times;
        for c in &tree.functions[f].calls {
            visit(tree, c.callee, times, calls);
        }
    }
    for c in &tree.setup_calls {
        visit(tree, c.callee, 1, &mut calls);
    }
    for c in &tree.loop_calls {
        visit(tree, c.callee, tree.iterations, &mut calls);
    }
    let sites = tree.functions.iter().flat_map(|f| &f.calls);
    let targets: BTreeSet<usize> = sites
        .chain(&tree.setup_calls)
        .chain(&tree.loop_calls)
        .filter(|c| c.indirect)
        .map(|c| c.callee)
        .collect();
    let lpad = targets.iter().map(|&f| calls[f]).sum();
    let ss: u64 = (0..n)
        .filter(|&f| !tree.functions[f].calls.is_empty())
        .map(|f| calls[f])
        .sum();
    (lpad, ss, ss)
}

fn measured(tree: &CallTree) -> Result<(Simulation, (u64, u64, u64)), String> {
    let s = sim(
        &program(&tree.emit(Instrumentation::FULL, false)),
        &full_cfg(CostTable::default()),
    )?;
    ensure(s.summary.stop == StopReason::Exited(0), || {
        format!("stopped with {:?}", s.summary.stop)
    })?;
    let h = &s.summary.histogram;
    let counts = (
        h.count(CfiTag::Lpad),
        h.count(CfiTag::SsPush),
        h.count(CfiTag::SsPopChk),
    );
    Ok((s, counts))
}

fn instruction_mix() -> Outcome {
    let mut trees = vec![
        ("call-heavy d8", call_heavy(8, 100, 4, false)),
        ("call-heavy d8 indirect", call_heavy(8, 100, 4, true)),
        ("call-heavy d3", call_heavy(3, 50, 0, false)),
        ("leaf-heavy", leaf_heavy(100, 8)),
        ("indirect-heavy", indirect_heavy(6, 40, 3)),
    ];
    for seed in 0..20 {
        trees.push(("random", random_tree(seed, 1 + seed as usize % 16, 4)));
    }
    for (name, tree) in &trees {
        let tree = tree.as_ref().map_err(|e| e.to_string())?;
        let (s, got) = measured(tree)?;
        let want = closed_form(tree);
        ensure(got == want, || {
            format!("{name}: measured {got:?}, closed form {want:?}")
        })?;
        let p = tree
            .predict(Instrumentation::FULL, &CostTable::default())
            .map_err(|e| e.to_string())?;
        let h = &s.summary.histogram;
        ensure(
            (p.dynamic.lpad, p.dynamic.sspush, p.dynamic.sspopchk) == got
                && p.instrumented_retired == h.retired,
            || {
                format!(
                    "{name}: generator prediction {:?} disagrees with the run",
                    p.dynamic
                )
            },
        )?;
        ensure(
            h.count(CfiTag::SsAmoSwapW) + h.count(CfiTag::SsAmoSwapD) == 0,
            || format!("{name}: ssamoswap retired"),
        )?;
        ensure(h.count(CfiTag::SsRdp) <= 1, || {
            format!("{name}: ssrdp retired more than once")
        })?;
    }

    // Call-heavy, depth D, iterations I: I * (2(D-1) + 1) CFI instructions.
    let (d, iters) = (8u64, 100u64);
    let (_, got) = measured(&call_heavy(d as u32, iters, 4, false).unwrap())?;
    ensure(got.0 + got.1 + got.2 == iters * (2 * (d - 1) + 1), || {
        format!("call-heavy total {got:?} is not I(2(D-1)+1)")
    })?;

    // Raising the per-function work dilutes the CFI fraction below 0.5%.
    let tree = call_heavy(d as u32, 20, 400, false).unwrap();
    let (s, _) = measured(&tree)?;
    let fraction = s.summary.histogram.cfi_fraction();
    ensure(fraction < 0.005, || {
        format!("CFI fraction {fraction:.5} not below 0.5%")
    })?;
    Ok(format!(
        "{} programs match; call-heavy work=400 fraction {:.3}%",
        trees.len(),
        fraction * 100.0
    ))
}

// ---------------------------------------------------------------- 6

fn paired(
    tree: &CallTree,
    instr: Instrumentation,
    table: &CostTable,
) -> Result<(f64, u64, u64, Simulation), String> {
    let prog = program(&tree.emit(instr, false));
    let base = program(&tree.emit(Instrumentation::NONE, false));
    let cfg = RunConfig {
        enable_zicfiss: instr.shadow_stack,
        enable_zicfilp: instr.landing_pads,
        ..full_cfg(table.clone())
    };
    let (report, s) =
        execute("cfi", &prog, Some(("base", &base)), &cfg).map_err(|e| e.to_string())?;
    ensure(report.pairing_error.is_none(), || {
        format!("{:?}", report.pairing_error)
    })?;
    let cycles = report.cycles.as_ref().ok_or("no cycle report")?;
    let base_cycles = report
        .baseline
        .as_ref()
        .and_then(|b| b.total_cycles)
        .ok_or("no baseline cycles")?;
    let pct = cycles.overhead_pct.ok_or("no overhead")?;
    Ok((pct, cycles.total_cycles, base_cycles, s))
}

fn timing() -> Outcome {
    let default = CostTable::default();
    ensure(default.lpad == 1 && !default.dual_commit, || {
        "default lpad cost is not 1 cycle".into()
    })?;

    // lpad costs exactly one cycle per instance.
    let tree = indirect_heavy(5, 30, 2).unwrap();
    let (_, cyc, base_cyc, s) = paired(&tree, Instrumentation::LANDING_PADS_ONLY, &default)?;
    let lpads = s.summary.histogram.count(CfiTag::Lpad);
    ensure(lpads == 150 && cyc - base_cyc == lpads, || {
        format!("{lpads} lpads added {} cycles", cyc - base_cyc)
    })?;
    let lpad_class = s
        .cycles
        .as_ref()
        .and_then(|c| c.cycles_by_class.get("lpad").copied());
    ensure(lpad_class == Some(lpads), || {
        format!("lpad class cycles {lpad_class:?}")
    })?;

    // Paired overhead equals the cost-table arithmetic exactly.
    for (tree, table) in [
        (call_heavy(8, 100, 4, false).unwrap(), default.clone()),
        (
            call_heavy(5, 60, 2, true).unwrap(),
            CostTable {
                sspush: 3,
                sspopchk: 4,
                lpad: 2,
                ..default.clone()
            },
        ),
        (random_tree(11, 12, 5).unwrap(), default.clone()),
    ] {
        let (pct, cyc, base_cyc, s) = paired(&tree, Instrumentation::FULL, &table)?;
        let h = &s.summary.histogram;
        let delta = h.count(CfiTag::Lpad) * u64::from(table.lpad)
            + h.count(CfiTag::SsPush) * u64::from(table.sspush)
            + h.count(CfiTag::SsPopChk) * u64::from(table.sspopchk);
        let analytic = delta as f64 / base_cyc as f64 * 100.0;
        ensure(cyc == base_cyc + delta && pct == analytic, || {
            format!("overhead {pct} vs analytic {analytic} ({cyc} vs {base_cyc}+{delta})")
        })?;
    }

    // Equal instruction counts: two lpads per iteration against one push and
    // one pop per iteration.
    let tree = call_heavy(2, 200, 4, true).unwrap();
    let dual = CostTable {
        dual_commit: true,
        ..default.clone()
    };
    for table in [&default, &dual] {
        let (lp, _, _, lp_sim) = paired(&tree, Instrumentation::LANDING_PADS_ONLY, table)?;
        let (ss, _, _, ss_sim) = paired(&tree, Instrumentation::SHADOW_STACK_ONLY, table)?;
        let (nl, ns) = (
            lp_sim.summary.histogram.cfi_retired(),
            ss_sim.summary.histogram.cfi_retired(),
        );
        ensure(nl == ns && nl == 400, || {
            format!("unequal counts: {nl} lpads vs {ns} push/pop")
        })?;
        ensure(lp < ss, || {
            format!("lpad-only {lp:.3}% not below push/pop {ss:.3}%")
        })?;
    }

    // A call every ten or so instructions lands in 0-20%; denser calls cost more.
    let mut last = f64::NEG_INFINITY;
    let mut series = Vec::new();
    for work in [64, 32, 16, 8, 4, 2, 0] {
        let (pct, ..) = paired(
            &call_heavy(8, 50, work, false).unwrap(),
            Instrumentation::FULL,
            &default,
        )?;
        ensure(pct > last, || {
            format!("overhead not monotone: work {work} gives {pct:.3}% after {last:.3}%")
        })?;
        last = pct;
        series.push(format!("w{work}:{pct:.2}%"));
    }
    let (tuned, ..) = paired(
        &call_heavy(8, 100, 4, false).unwrap(),
        Instrumentation::FULL,
        &default,
    )?;
    ensure((0.0..=20.0).contains(&tuned), || {
        format!("tuned call-heavy overhead {tuned:.3}% outside 0-20%")
    })?;
    Ok(format!("tuned {tuned:.2}%; {}", series.join(" ")))
}

// ---------------------------------------------------------------- 7

fn code_size() -> Outcome {
    let mut trees = vec![
        call_heavy(8, 1, 4, false).unwrap(),
        call_heavy(4, 1, 0, true).unwrap(),
        leaf_heavy(1, 3).unwrap(),
        indirect_heavy(7, 1, 1).unwrap(),
    ];
    trees.extend((0..30).map(|s| random_tree(s, 1 + s as usize % 20, 1).unwrap()));
    for (i, tree) in trees.iter().enumerate() {
        let inst = program(&tree.emit(Instrumentation::FULL, false));
        let base = program(&tree.emit(Instrumentation::NONE, false));
        let n = tree
            .functions
            .iter()
            .flat_map(|f| &f.calls)
            .chain(&tree.setup_calls)
            .chain(&tree.loop_calls)
            .filter(|c| c.indirect)
            .map(|c| c.callee)
            .collect::<BTreeSet<_>>()
            .len() as u64;
        let m = tree
            .functions
            .iter()
            .filter(|f| !f.calls.is_empty())
            .count() as u64;
        let base_bytes: u64 = base.text_ranges.iter().map(|r| r.end - r.start).sum();
        let want = (4 * (n + 2 * m)) as f64 / base_bytes as f64 * 100.0;
        let r = analyze_size("inst", &inst, Some(&base));
        ensure(r.cfi_bytes == 4 * (n + 2 * m), || {
            format!("tree {i}: cfi_bytes {} vs {}", r.cfi_bytes, 4 * (n + 2 * m))
        })?;
        ensure(r.overhead_pct == Some(want), || {
            format!("tree {i}: {:?} vs {want}", r.overhead_pct)
        })?;
        let same = analyze_size("base", &base, Some(&base));
        ensure(
            same.overhead_pct == Some(0.0) && same.delta_bytes == Some(0),
            || format!("tree {i}: identical pair reports {:?}", same.overhead_pct),
        )?;
    }
    Ok(format!(
        "{} pairs match 4(N+2M)/base; identical pairs give 0",
        trees.len()
    ))
}

// ---------------------------------------------------------------- 8

fn round_trip() -> Outcome {
    let rows = all_rows();
    let mut rng = 0x0008_7777u64;
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for row in &rows {
        for k in 0..400 {
            let r = if k < 2 {
                [u64::MAX * k; 4]
            } else {
                [
                    xorshift(&mut rng),
                    xorshift(&mut rng),
                    xorshift(&mut rng),
                    xorshift(&mut rng),
                ]
            };
            if let Err(e) = round_trip_check(row, sample_operands(row, r)) {
                mismatches.push(e);
            }
            checked += 1;
        }
    }
    ensure(mismatches.is_empty(), || {
        format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
    })?;
    Ok(format!(
        "{} mnemonics, {checked} samples, 0 mismatches",
        rows.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 attack detection", attacks, Duration::from_secs(1)),
        ("2 transparency", transparency, Duration::from_secs(60)),
        ("3 policy matrix", policy_matrix, Duration::from_secs(1)),
        (
            "4 chain equivalence",
            chain_equivalence,
            Duration::from_secs(60),
        ),
        ("5 instruction mix", instruction_mix, Duration::MAX),
        ("6 timing", timing, Duration::MAX),
        ("7 code size", code_size, Duration::MAX),
        ("8 round trip", round_trip, Duration::from_secs(10)),
    ];
    let mut failed = Vec::new();
    for (name, f, budget) in criteria {
        let t = Instant::now();
        let mut outcome = f();
        let elapsed = t.elapsed();
        if outcome.is_ok() && elapsed > budget {
            outcome = Err(format!("took {elapsed:?}, budget {budget:?}"));
        }
        match outcome {
            Ok(detail) => println!("PASS {name} ({:.2?}): {detail}", elapsed),
            Err(why) => {
                println!("FAIL {name} ({:.2?}): {why}", elapsed);
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
