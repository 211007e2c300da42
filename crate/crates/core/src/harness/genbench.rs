//! Synthetic benchmark generator.
//!
//! A benchmark is a [`CallTree`]: an acyclic set of functions, each doing a
//! fixed amount of straight-line ALU work and then a list of direct or
//! indirect calls. `_start` runs a set of one-time calls, then a loop whose
//! body does some inline work and its own calls, stores the accumulator `s2`
//! to `result` and exits.
//!
//! Three renderings share one layout:
//!
//! * baseline: no CFI instructions;
//! * padded: every CFI instruction replaced by `nop` (same addresses as the
//!   instrumented build);
//! * instrumented: `lpad <label>` at every indirect-call target and
//!   `sspush ra`/`sspopchk ra` around every non-leaf body.
//!
//! Indirect calls load the target with `la t1` and the callee label into
//! `x7` with `lui t2` in every rendering, so the renderings differ only in
//! CFI instructions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

use crate::program::asm::li_sequence;
use crate::program::CfiCounts;
use crate::timing::{overhead_pct, CostTable};

pub const MAX_FUNCTIONS: usize = 4096;
pub const MAX_WORK: u32 = 100_000;
pub const MAX_ITERATIONS: u64 = 100_000_000;
/// Upper bound on predicted retired instructions of a generated program.
pub const MAX_DYNAMIC: u64 = 1 << 40;
pub const RESULT_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("parameter out of range: {0}")]
    Bounds(String),
    #[error("call graph has a cycle through function {0}")]
    Cycle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CallSite {
    pub callee: usize,
    pub indirect: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Function {
    /// Straight-line ALU instructions in the body.
    pub work: u32,
    pub calls: Vec<CallSite>,
}

impl Function {
    pub fn is_leaf(&self) -> bool {
        self.calls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallTree {
    pub functions: Vec<Function>,
    pub setup_calls: Vec<CallSite>,
    pub loop_calls: Vec<CallSite>,
    pub loop_work: u32,
    pub iterations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Instrumentation {
    pub landing_pads: bool,
    pub shadow_stack: bool,
}

impl Instrumentation {
    pub const NONE: Instrumentation = Instrumentation {
        landing_pads: false,
        shadow_stack: false,
    };
    pub const FULL: Instrumentation = Instrumentation {
        landing_pads: true,
        shadow_stack: true,
    };
    pub const LANDING_PADS_ONLY: Instrumentation = Instrumentation {
        landing_pads: true,
        shadow_stack: false,
    };
    pub const SHADOW_STACK_ONLY: Instrumentation = Instrumentation {
        landing_pads: false,
        shadow_stack: true,
    };
}

/// Landing-pad label of function `i`.
pub fn label_of(i: usize) -> u32 {
    i as u32 + 1
}

/// Per-class instruction counts and taken transfers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Mix {
    alu: u64,
    load: u64,
    store: u64,
    branch: u64,
    jal: u64,
    jalr: u64,
    system: u64,
    taken: u64,
}

impl Mix {
    fn instructions(&self) -> u64 {
        [
            self.alu,
            self.load,
            self.store,
            self.branch,
            self.jal,
            self.jalr,
            self.system,
        ]
        .iter()
        .fold(0u64, |a, b| a.saturating_add(*b))
    }

    fn cycles(&self, t: &CostTable) -> u64 {
        [
            (self.alu, t.alu),
            (self.load, t.load),
            (self.store, t.store),
            (self.branch, t.branch),
            (self.jal, t.jal),
            (self.jalr, t.jalr),
            (self.system, t.system),
            (self.taken, t.branch_penalty),
        ]
        .iter()
        .fold(0u64, |a, (n, c)| {
            a.saturating_add(n.saturating_mul(u64::from(*c)))
        })
    }

    fn add_scaled(&mut self, o: &Mix, n: u64) {
        self.alu = self.alu.saturating_add(o.alu.saturating_mul(n));
        self.load = self.load.saturating_add(o.load.saturating_mul(n));
        self.store = self.store.saturating_add(o.store.saturating_mul(n));
        self.branch = self.branch.saturating_add(o.branch.saturating_mul(n));
        self.jal = self.jal.saturating_add(o.jal.saturating_mul(n));
        self.jalr = self.jalr.saturating_add(o.jalr.saturating_mul(n));
        self.system = self.system.saturating_add(o.system.saturating_mul(n));
        self.taken = self.taken.saturating_add(o.taken.saturating_mul(n));
    }

    fn call(&mut self, c: &CallSite) {
        if c.indirect {
            self.alu += 3;
            self.jalr += 1;
        } else {
            self.jal += 1;
        }
        self.taken += 1;
    }
}

/// Closed-form expectations for one generated pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub instrumentation: Instrumentation,
    /// CFI instructions retired by the instrumented program.
    pub dynamic: CfiCounts,
    /// CFI instructions present in the instrumented text.
    pub static_counts: CfiCounts,
    pub cfi_bytes: u64,
    pub baseline_text_bytes: u64,
    pub size_overhead_pct: f64,
    pub baseline_retired: u64,
    pub instrumented_retired: u64,
    pub cfi_fraction: f64,
    pub baseline_cycles: u64,
    pub instrumented_cycles: u64,
    pub cycle_overhead_pct: f64,
    /// Value stored at `result` when the program exits; computed only for
    /// programs of at most [`RESULT_LIMIT`] retired instructions.
    pub result: Option<u64>,
}

impl CallTree {
    fn all_sites(&self) -> impl Iterator<Item = &CallSite> {
        self.setup_calls
            .iter()
            .chain(&self.loop_calls)
            .chain(self.functions.iter().flat_map(|f| &f.calls))
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let n = self.functions.len();
        if n > MAX_FUNCTIONS {
            return Err(GenError::Bounds(format!("{n} functions > {MAX_FUNCTIONS}")));
        }
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            return Err(GenError::Bounds(format!(
                "iterations must be in 1..={MAX_ITERATIONS}"
            )));
        }
        if self.functions.iter().any(|f| f.work > MAX_WORK) || self.loop_work > MAX_WORK {
            return Err(GenError::Bounds(format!("work must be at most {MAX_WORK}")));
        }
        if let Some(c) = self.all_sites().find(|c| c.callee >= n) {
            return Err(GenError::Bounds(format!(
                "call to missing function {}",
                c.callee
            )));
        }
        let entered = self
            .invocations()?
            .iter()
            .fold(0u64, |a, b| a.saturating_add(*b));
        if entered > MAX_DYNAMIC {
            return Err(GenError::Bounds("program would run too long".into()));
        }
        let retired = self.try_predict(Instrumentation::FULL, &CostTable::default())?;
        if retired.instrumented_retired > MAX_DYNAMIC {
            return Err(GenError::Bounds("program would run too long".into()));
        }
        Ok(())
    }

    /// Callers before callees.
    fn topo_order(&self) -> Result<Vec<usize>, GenError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let n = self.functions.len();
        let mut mark = vec![Mark::New; n];
        let mut post = Vec::with_capacity(n);
        for root in 0..n {
            if mark[root] != Mark::New {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            mark[root] = Mark::Active;
            while let Some((f, i)) = stack.pop() {
                if let Some(c) = self.functions[f].calls.get(i) {
                    stack.push((f, i + 1));
                    match mark[c.callee] {
                        Mark::Active => return Err(GenError::Cycle(c.callee)),
                        Mark::New => {
                            mark[c.callee] = Mark::Active;
                            stack.push((c.callee, 0));
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[f] = Mark::Done;
                    post.push(f);
                }
            }
        }
        post.reverse();
        Ok(post)
    }

    /// Number of times each function is entered.
    pub fn invocations(&self) -> Result<Vec<u64>, GenError> {
        let mut inv = vec![0u64; self.functions.len()];
        let overflow = || GenError::Bounds("invocation count overflows".into());
        for c in &self.setup_calls {
            inv[c.callee] = inv[c.callee].checked_add(1).ok_or_else(overflow)?;
        }
        for c in &self.loop_calls {
            inv[c.callee] = inv[c.callee]
                .checked_add(self.iterations)
                .ok_or_else(overflow)?;
        }
        for f in self.topo_order()? {
            for c in &self.functions[f].calls {
                inv[c.callee] = inv[c.callee].checked_add(inv[f]).ok_or_else(overflow)?;
            }
        }
        Ok(inv)
    }

    pub fn indirect_targets(&self) -> Vec<bool> {
        let mut t = vec![false; self.functions.len()];
        for c in self.all_sites().filter(|c| c.indirect) {
            t[c.callee] = true;
        }
        t
    }

    fn has_lpad(&self, f: usize, instr: Instrumentation, targets: &[bool]) -> bool {
        instr.landing_pads && targets[f]
    }

    fn has_ss(&self, f: usize, instr: Instrumentation) -> bool {
        instr.shadow_stack && !self.functions[f].is_leaf()
    }

    fn function_mix(&self, f: usize) -> Mix {
        let func = &self.functions[f];
        let mut m = Mix {
            alu: u64::from(func.work),
            jalr: 1,
            taken: 1,
            ..Mix::default()
        };
        if !func.is_leaf() {
            m.alu += 2;
            m.store += 1;
            m.load += 1;
        }
        for c in &func.calls {
            m.call(c);
        }
        m
    }

    fn work_value(salt: usize, k: u32, acc: u64) -> u64 {
        let imm = work_imm(salt, k) as u64;
        if k.is_multiple_of(2) {
            acc.wrapping_add(imm)
        } else {
            acc ^ imm
        }
    }

    /// Accumulator after running the program: each work instruction is
    /// applied in program order.
    fn result(&self) -> u64 {
        fn call(tree: &CallTree, f: usize, acc: u64) -> u64 {
            let func = &tree.functions[f];
            let mut acc = acc;
            for k in 0..func.work {
                acc = CallTree::work_value(f + 1, k, acc);
            }
            for c in &func.calls {
                acc = call(tree, c.callee, acc);
            }
            acc
        }
        let mut acc = 0u64;
        for c in &self.setup_calls {
            acc = call(self, c.callee, acc);
        }
        for _ in 0..self.iterations {
            for k in 0..self.loop_work {
                acc = CallTree::work_value(0, k, acc);
            }
            for c in &self.loop_calls {
                acc = call(self, c.callee, acc);
            }
        }
        acc
    }

    fn try_predict(
        &self,
        instr: Instrumentation,
        table: &CostTable,
    ) -> Result<Prediction, GenError> {
        let inv = self.invocations()?;
        let targets = self.indirect_targets();

        let mut base = Mix::default();
        let mut static_base = Mix::default();
        base.alu += li_sequence(9, self.iterations as i64).len() as u64 + 1;
        for c in &self.setup_calls {
            base.call(c);
        }
        let mut body = Mix {
            alu: u64::from(self.loop_work) + 1,
            branch: 1,
            ..Mix::default()
        };
        for c in &self.loop_calls {
            body.call(c);
        }
        static_base.add_scaled(&base, 1);
        static_base.add_scaled(&body, 1);
        base.add_scaled(&body, self.iterations);
        base.taken += self.iterations - 1;
        let tail = Mix {
            alu: 4,
            store: 1,
            system: 1,
            ..Mix::default()
        };
        base.add_scaled(&tail, 1);
        static_base.add_scaled(&tail, 1);

        let mut dynamic = CfiCounts::default();
        let mut static_counts = CfiCounts::default();
        for (f, n) in inv.iter().enumerate() {
            let m = self.function_mix(f);
            base.add_scaled(&m, *n);
            static_base.add_scaled(&m, 1);
            if self.has_lpad(f, instr, &targets) {
                dynamic.lpad += n;
                static_counts.lpad += 1;
            }
            if self.has_ss(f, instr) {
                dynamic.sspush += n;
                dynamic.sspopchk += n;
                static_counts.sspush += 1;
                static_counts.sspopchk += 1;
            }
        }

        // Every lpad follows a taken call, which never shares its commit
        // slot, so with dual commit the lpad rides along for free.
        let lpad_cycles = if table.dual_commit {
            0
        } else {
            u64::from(table.lpad)
        };
        let cfi_cycles = (dynamic.lpad.saturating_mul(lpad_cycles))
            .saturating_add(dynamic.sspush.saturating_mul(u64::from(table.sspush)))
            .saturating_add(dynamic.sspopchk.saturating_mul(u64::from(table.sspopchk)));
        let baseline_cycles = base.cycles(table);
        let baseline_retired = base.instructions();
        let instrumented_retired = baseline_retired + dynamic.total();
        let baseline_text_bytes = 4 * static_base.instructions();
        let cfi_bytes = 4 * static_counts.total();
        Ok(Prediction {
            instrumentation: instr,
            dynamic,
            static_counts,
            cfi_bytes,
            baseline_text_bytes,
            size_overhead_pct: overhead_pct(baseline_text_bytes + cfi_bytes, baseline_text_bytes),
            baseline_retired,
            instrumented_retired,
            cfi_fraction: dynamic.total() as f64 / instrumented_retired as f64,
            baseline_cycles,
            instrumented_cycles: baseline_cycles.saturating_add(cfi_cycles),
            cycle_overhead_pct: overhead_pct(baseline_cycles + cfi_cycles, baseline_cycles),
            result: None,
        })
    }

    pub fn predict(
        &self,
        instr: Instrumentation,
        table: &CostTable,
    ) -> Result<Prediction, GenError> {
        self.validate()?;
        let mut p = self.try_predict(instr, table)?;
        if p.instrumented_retired <= RESULT_LIMIT {
            p.result = Some(self.result());
        }
        Ok(p)
    }

    /// Renders assembler source. With `pad`, CFI instructions become `nop`.
    pub fn emit(&self, instr: Instrumentation, pad: bool) -> String {
        let targets = self.indirect_targets();
        let mut s = String::new();
        let cfi = |s: &mut String, text: String| {
            if pad {
                s.push_str("    nop\n");
            } else {
                let _ = writeln!(s, "    {text}");
            }
        };
        let call = |s: &mut String, c: &CallSite| {
            if c.indirect {
                let _ = writeln!(s, "    la t1, f{}", c.callee);
                let _ = writeln!(s, "    lui t2, {:#x}", label_of(c.callee));
                s.push_str("    jalr t1\n");
            } else {
                let _ = writeln!(s, "    call f{}", c.callee);
            }
        };
        let work = |s: &mut String, salt: usize, n: u32| {
            for k in 0..n {
                let op = if k % 2 == 0 { "addi" } else { "xori" };
                let _ = writeln!(s, "    {op} s2, s2, {}", work_imm(salt, k));
            }
        };

        s.push_str("    .text\n    .globl _start\n_start:\n");
        let _ = writeln!(s, "    li s1, {}", self.iterations);
        s.push_str("    li s2, 0\n");
        for c in &self.setup_calls {
            call(&mut s, c);
        }
        s.push_str("main_loop:\n");
        work(&mut s, 0, self.loop_work);
        for c in &self.loop_calls {
            call(&mut s, c);
        }
        s.push_str("    addi s1, s1, -1\n    bnez s1, main_loop\n");
        s.push_str("    la t0, result\n    sd s2, 0(t0)\n");
        s.push_str("    li a0, 0\n    li a7, 93\n    ecall\n");

        for (i, f) in self.functions.iter().enumerate() {
            let _ = writeln!(s, "\nf{i}:");
            if self.has_lpad(i, instr, &targets) {
                cfi(&mut s, format!("lpad {:#x}", label_of(i)));
            }
            let nonleaf = !f.is_leaf();
            if nonleaf {
                s.push_str("    addi sp, sp, -16\n    sd ra, 8(sp)\n");
            }
            if self.has_ss(i, instr) {
                cfi(&mut s, "sspush ra".into());
            }
            work(&mut s, i + 1, f.work);
            for c in &f.calls {
                call(&mut s, c);
            }
            if nonleaf {
                s.push_str("    ld ra, 8(sp)\n    addi sp, sp, 16\n");
            }
            if self.has_ss(i, instr) {
                cfi(&mut s, "sspopchk ra".into());
            }
            s.push_str("    ret\n");
        }
        s.push_str("\n    .data\nresult:\n    .dword 0\n");
        s
    }
}

fn work_imm(salt: usize, k: u32) -> i64 {
    ((salt as i64 * 7 + i64::from(k) * 13) % 63) + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    CallHeavy,
    LeafHeavy,
    IndirectHeavy,
    Random,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile::CallHeavy,
        Profile::LeafHeavy,
        Profile::IndirectHeavy,
        Profile::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::CallHeavy => "call-heavy",
            Profile::LeafHeavy => "leaf-heavy",
            Profile::IndirectHeavy => "indirect-heavy",
            Profile::Random => "random",
        }
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown profile `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenParams {
    /// Call-chain length (call-heavy).
    pub depth: u32,
    pub iterations: u64,
    /// ALU instructions per function body (and per loop body for leaf-heavy).
    pub work: u32,
    /// Number of indirect handlers (indirect-heavy).
    pub handlers: u32,
    /// Make every call in the call-heavy chain indirect.
    pub indirect: bool,
    /// Random profile: number of functions, RNG seed.
    pub functions: usize,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            depth: 8,
            iterations: 100,
            work: 4,
            handlers: 4,
            indirect: false,
            functions: 8,
            seed: 1,
        }
    }
}

fn check(ok: bool, what: &str) -> Result<(), GenError> {
    if ok {
        Ok(())
    } else {
        Err(GenError::Bounds(what.to_string()))
    }
}

/// `depth` functions `f0 -> f1 -> ... -> f(depth-1)`; the loop calls `f0`
/// indirectly.
pub fn call_heavy(
    depth: u32,
    iterations: u64,
    work: u32,
    indirect: bool,
) -> Result<CallTree, GenError> {
    check((1..=1024).contains(&depth), "depth must be in 1..=1024")?;
    let d = depth as usize;
    let functions = (0..d)
        .map(|i| Function {
            work,
            calls: if i + 1 < d {
                vec![CallSite {
                    callee: i + 1,
                    indirect,
                }]
            } else {
                Vec::new()
            },
        })
        .collect();
    let tree = CallTree {
        functions,
        setup_calls: Vec::new(),
        loop_calls: vec![CallSite {
            callee: 0,
            indirect: true,
        }],
        loop_work: 0,
        iterations,
    };
    tree.validate()?;
    Ok(tree)
}

/// One indirect setup call into a non-leaf, then a loop of inline work and a
/// direct leaf call.
pub fn leaf_heavy(iterations: u64, work: u32) -> Result<CallTree, GenError> {
    let tree = CallTree {
        functions: vec![
            Function {
                work: 2,
                calls: vec![CallSite {
                    callee: 1,
                    indirect: false,
                }],
            },
            Function {
                work,
                calls: Vec::new(),
            },
        ],
        setup_calls: vec![CallSite {
            callee: 0,
            indirect: true,
        }],
        loop_calls: vec![CallSite {
            callee: 1,
            indirect: false,
        }],
        loop_work: work,
        iterations,
    };
    tree.validate()?;
    Ok(tree)
}

/// `handlers` leaf functions, each called indirectly once per iteration.
pub fn indirect_heavy(handlers: u32, iterations: u64, work: u32) -> Result<CallTree, GenError> {
    check(
        (1..=1024).contains(&handlers),
        "handlers must be in 1..=1024",
    )?;
    let n = handlers as usize;
    let tree = CallTree {
        functions: vec![
            Function {
                work,
                calls: Vec::new(),
            };
            n
        ],
        setup_calls: Vec::new(),
        loop_calls: (0..n)
            .map(|callee| CallSite {
                callee,
                indirect: true,
            })
            .collect(),
        loop_work: 0,
        iterations,
    };
    tree.validate()?;
    Ok(tree)
}

/// Random acyclic call tree; functions only call higher-numbered ones.
pub fn random_tree(seed: u64, functions: usize, iterations: u64) -> Result<CallTree, GenError> {
    check((1..=64).contains(&functions), "functions must be in 1..=64")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut funcs = Vec::with_capacity(functions);
    for i in 0..functions {
        let ncalls = if i + 1 < functions {
            rng.gen_range(0..=2)
        } else {
            0
        };
        let calls = (0..ncalls)
            .map(|_| CallSite {
                callee: rng.gen_range(i + 1..functions),
                indirect: rng.gen_bool(0.4),
            })
            .collect();
        funcs.push(Function {
            work: rng.gen_range(0..=6),
            calls,
        });
    }
    let mut loop_calls = vec![CallSite {
        callee: 0,
        indirect: rng.gen_bool(0.5),
    }];
    for _ in 0..rng.gen_range(0..=2) {
        loop_calls.push(CallSite {
            callee: rng.gen_range(0..functions),
            indirect: rng.gen_bool(0.5),
        });
    }
    let tree = CallTree {
        functions: funcs,
        setup_calls: Vec::new(),
        loop_calls,
        loop_work: rng.gen_range(0..=3),
        iterations,
    };
    tree.validate()?;
    Ok(tree)
}

pub fn build(profile: Profile, p: &GenParams) -> Result<CallTree, GenError> {
    match profile {
        Profile::CallHeavy => call_heavy(p.depth, p.iterations, p.work, p.indirect),
        Profile::LeafHeavy => leaf_heavy(p.iterations, p.work),
        Profile::IndirectHeavy => indirect_heavy(p.handlers, p.iterations, p.work),
        Profile::Random => random_tree(p.seed, p.functions, p.iterations),
    }
}

/// A generated benchmark pair with its expectations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bench {
    pub profile: Profile,
    pub params: GenParams,
    pub tree: CallTree,
    #[serde(skip)]
    pub baseline: String,
    #[serde(skip)]
    pub padded: String,
    #[serde(skip)]
    pub instrumented: String,
    pub prediction: Prediction,
}

pub fn generate(
    profile: Profile,
    params: &GenParams,
    table: &CostTable,
) -> Result<Bench, GenError> {
    let tree = build(profile, params)?;
    let prediction = tree.predict(Instrumentation::FULL, table)?;
    Ok(Bench {
        profile,
        params: params.clone(),
        baseline: tree.emit(Instrumentation::NONE, false),
        padded: tree.emit(Instrumentation::FULL, true),
        instrumented: tree.emit(Instrumentation::FULL, false),
        tree,
        prediction,
    })
}
