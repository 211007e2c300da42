use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfisim::harness::attack::{run_attack, Scenario};
use cfisim::harness::config::{Overrides, RunConfig};
use cfisim::harness::genbench::{generate, GenParams, Profile};
use cfisim::harness::report::reports_to_csv;
use cfisim::harness::runner::{execute, format_trace};
use cfisim::program::asm::DEFAULT_TEXT_BASE;
use cfisim::program::size::SIZE_CSV_HEADER;
use cfisim::program::{analyze_size, assemble_program, load_elf, write_elf, LoadedProgram};

/// Exit code for configuration, load and I/O errors.
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cfisim",
    version,
    about = "RV64 simulator with shadow-stack and landing-pad CFI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program (ELF or assembler source) and report its execution.
    Run(RunArgs),
    /// Run the built-in code-reuse attack scenarios.
    Attack(AttackArgs),
    /// Generate a synthetic benchmark pair with its predicted counts.
    Genbench(GenArgs),
    /// Merge saved JSON reports into one CSV table.
    Report(ReportArgs),
    /// Count CFI instructions and code-size overhead statically.
    AnalyzeSize(SizeArgs),
}

#[derive(Args)]
struct SimFlags {
    /// Config file (TOML).
    #[arg(long, env = "CFISIM_CONFIG")]
    config: Option<PathBuf>,
    /// Enable the shadow stack (Zicfiss) for user mode.
    #[arg(long, env = "CFISIM_ENABLE_ZICFISS", num_args = 0..=1, require_equals = true,
          default_missing_value = "true")]
    enable_zicfiss: Option<bool>,
    /// Enable landing pads (Zicfilp) for user mode.
    #[arg(long, env = "CFISIM_ENABLE_ZICFILP", num_args = 0..=1, require_equals = true,
          default_missing_value = "true")]
    enable_zicfilp: Option<bool>,
    /// Require landing pads after returns (`jalr x0, 0(ra|t0)`) too.
    #[arg(long, env = "CFISIM_LP_PROTECT_RET", num_args = 0..=1, require_equals = true,
          default_missing_value = "true")]
    lp_protect_ret: Option<bool>,
    /// Model cycles with the cost table.
    #[arg(long, env = "CFISIM_TIMING", num_args = 0..=1, require_equals = true,
          default_missing_value = "true")]
    timing: Option<bool>,
    /// Cost table file (TOML).
    #[arg(long, env = "CFISIM_COST_TABLE")]
    cost_table: Option<PathBuf>,
    /// Maximum retired instructions.
    #[arg(long, env = "CFISIM_LIMIT")]
    limit: Option<u64>,
}

impl SimFlags {
    fn config(&self, trace: Option<PathBuf>) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            enable_zicfiss: self.enable_zicfiss,
            enable_zicfilp: self.enable_zicfilp,
            lp_protect_ret: self.lp_protect_ret,
            timing: self.timing,
            cost_table_path: self.cost_table.clone(),
            limit: self.limit,
            trace_path: trace,
        })
        .map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    /// ELF executable, or assembler source (`.s`, `.S`, `.asm`).
    program: PathBuf,
    /// Baseline build of the same program; run with both extensions off.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[command(flatten)]
    sim: SimFlags,
    /// Write the JSON report here (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write a one-row CSV here (`-` for stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write an instruction trace here.
    #[arg(long, env = "CFISIM_TRACE")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Scenarios to run (default: all).
    scenarios: Vec<String>,
    #[command(flatten)]
    sim: SimFlags,
    /// Write verdicts as JSON here (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// call-heavy, leaf-heavy, indirect-heavy or random.
    profile: String,
    /// Output directory for baseline.s, padded.s, instrumented.s, expected.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = GenParams::default().depth)]
    depth: u32,
    #[arg(long, default_value_t = GenParams::default().iterations)]
    iters: u64,
    #[arg(long, default_value_t = GenParams::default().work)]
    work: u32,
    #[arg(long, default_value_t = GenParams::default().handlers)]
    handlers: u32,
    /// Make every call of the call-heavy chain indirect.
    #[arg(long)]
    indirect: bool,
    #[arg(long, default_value_t = GenParams::default().functions)]
    functions: usize,
    #[arg(long, default_value_t = GenParams::default().seed)]
    seed: u64,
    /// Also write ELF executables.
    #[arg(long)]
    elf: bool,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON reports written by `run --json` or `analyze-size --json`.
    inputs: Vec<PathBuf>,
    /// Output path (default: stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SizeArgs {
    /// ELF executable or assembler source to scan
    program: PathBuf,
    /// Uninstrumented build to measure the size overhead against
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Write the JSON report here (`-` for stdout)
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write a one-row CSV here (`-` for stdout)
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn load_program(path: &Path) -> Result<LoadedProgram, String> {
    let is_asm = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("s" | "S" | "asm")
    );
    if is_asm {
        let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        assemble_program(&src, DEFAULT_TEXT_BASE)
            .map(|a| a.into_program())
            .map_err(|e| format!("{}: {e}", path.display()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        load_elf(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn write_out(path: &Path, content: &str) -> Result<(), String> {
    if path == Path::new("-") {
        print!("{content}");
        Ok(())
    } else {
        std::fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_run(a: &RunArgs) -> Result<u8, String> {
    let cfg = a.sim.config(a.trace.clone())?;
    let prog = load_program(&a.program)?;
    let base = a.baseline.as_deref().map(load_program).transpose()?;
    let name = display_name(&a.program);
    let base_name = a.baseline.as_deref().map(display_name).unwrap_or_default();
    let (report, sim) = execute(
        &name,
        &prog,
        base.as_ref().map(|b| (base_name.as_str(), b)),
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    if let Some(t) = &a.trace {
        write_out(t, &format_trace(&sim.trace))?;
    }
    let json = report.to_json();
    if let Some(p) = &a.json {
        write_out(p, &json)?;
    }
    if let Some(p) = &a.csv {
        let v = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        write_out(
            p,
            &reports_to_csv(&[(name.clone(), v)]).map_err(|e| e.to_string())?,
        )?;
    }
    let to_stdout = |p: &Option<PathBuf>| p.as_deref() == Some(Path::new("-"));
    if !to_stdout(&a.json) && !to_stdout(&a.csv) {
        print!("{}", report.to_text());
    }
    Ok(report.process_code() as u8)
}

fn cmd_attack(a: &AttackArgs) -> Result<u8, String> {
    let cfg = a.sim.config(None)?;
    let scenarios = if a.scenarios.is_empty() || a.scenarios.iter().any(|s| s == "all") {
        Scenario::ALL.to_vec()
    } else {
        a.scenarios
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Scenario>, _>>()?
    };
    let mut verdicts = Vec::new();
    for s in scenarios {
        let v = run_attack(s, &cfg).map_err(|e| e.to_string())?;
        let blocked = v
            .protected
            .exception
            .as_ref()
            .map(|e| match e.subcode {
                Some(sub) => format!("{:?}/{sub:?} at {:#x}", e.cause, e.pc),
                None => format!("{:?} at {:#x}", e.cause, e.pc),
            })
            .unwrap_or_else(|| v.protected.stop.clone());
        let line = format!(
            "{} {:<20} off: gadget {}; on: {}",
            if v.pass { "PASS" } else { "FAIL" },
            s.name(),
            if v.unprotected.gadget_reached {
                "reached"
            } else {
                "not reached"
            },
            blocked
        );
        if a.json.as_deref() != Some(Path::new("-")) {
            println!("{line}");
            if let Some(t) = &v.trace {
                print!("{t}");
            }
        }
        verdicts.push(v);
    }
    if let Some(p) = &a.json {
        let json = serde_json::to_string_pretty(&verdicts).map_err(|e| e.to_string())? + "\n";
        write_out(p, &json)?;
    }
    Ok(if verdicts.iter().all(|v| v.pass) {
        0
    } else {
        1
    })
}

fn cmd_genbench(a: &GenArgs) -> Result<u8, String> {
    let cfg = a.sim.config(None)?;
    let profile: Profile = a.profile.parse()?;
    let params = GenParams {
        depth: a.depth,
        iterations: a.iters,
        work: a.work,
        handlers: a.handlers,
        indirect: a.indirect,
        functions: a.functions,
        seed: a.seed,
    };
    let bench = generate(profile, &params, &cfg.cost_table).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| format!("{}: {e}", a.out_dir.display()))?;
    let files = [
        ("baseline", &bench.baseline),
        ("padded", &bench.padded),
        ("instrumented", &bench.instrumented),
    ];
    for (stem, src) in files {
        write_out(&a.out_dir.join(format!("{stem}.s")), src)?;
        if a.elf {
            let prog = assemble_program(src, DEFAULT_TEXT_BASE)
                .map_err(|e| format!("{stem}: {e}"))?
                .into_program();
            let path = a.out_dir.join(format!("{stem}.elf"));
            std::fs::write(&path, write_elf(&prog))
                .map_err(|e| format!("{}: {e}", path.display()))?;
        }
    }
    let json = serde_json::to_string_pretty(&bench).map_err(|e| e.to_string())? + "\n";
    write_out(&a.out_dir.join("expected.json"), &json)?;
    let p = &bench.prediction;
    println!("profile            {}", profile.name());
    println!(
        "dynamic cfi        {} (lpad {}, sspush {}, sspopchk {})",
        p.dynamic.total(),
        p.dynamic.lpad,
        p.dynamic.sspush,
        p.dynamic.sspopchk
    );
    println!(
        "retired            {} baseline, {} instrumented",
        p.baseline_retired, p.instrumented_retired
    );
    println!("cfi fraction       {:.6}%", p.cfi_fraction * 100.0);
    println!(
        "cfi bytes          {} ({:.4}% of {})",
        p.cfi_bytes, p.size_overhead_pct, p.baseline_text_bytes
    );
    println!(
        "cycles             {} baseline, {} instrumented ({:.4}%)",
        p.baseline_cycles, p.instrumented_cycles, p.cycle_overhead_pct
    );
    Ok(0)
}

fn cmd_report(a: &ReportArgs) -> Result<u8, String> {
    let mut inputs = Vec::new();
    for path in &a.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let v = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        inputs.push((path.display().to_string(), v));
    }
    let csv = reports_to_csv(&inputs).map_err(|e| e.to_string())?;
    write_out(a.csv.as_deref().unwrap_or(Path::new("-")), &csv)?;
    Ok(0)
}

fn cmd_analyze_size(a: &SizeArgs) -> Result<u8, String> {
    let prog = load_program(&a.program)?;
    let base = a.baseline.as_deref().map(load_program).transpose()?;
    let r = analyze_size(&display_name(&a.program), &prog, base.as_ref());
    if let Some(p) = &a.json {
        write_out(
            p,
            &(serde_json::to_string_pretty(&r).map_err(|e| e.to_string())? + "\n"),
        )?;
    }
    if let Some(p) = &a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SIZE_CSV_HEADER).map_err(|e| e.to_string())?;
        w.write_record(r.csv_row()).map_err(|e| e.to_string())?;
        let bytes = w.into_inner().map_err(|e| e.to_string())?;
        write_out(p, &String::from_utf8_lossy(&bytes))?;
    }
    if a.json.is_none() && a.csv.is_none() {
        println!("text bytes     {}", r.total_text_bytes);
        println!("cfi bytes      {}", r.cfi_bytes);
        println!(
            "counts         lpad {}, sspush {}, sspopchk {}, ssrdp {}, ssamoswap {}",
            r.counts.lpad, r.counts.sspush, r.counts.sspopchk, r.counts.ssrdp, r.counts.ssamoswap
        );
        println!("skipped words  {}", r.skipped_words);
        if let (Some(p), Some(d)) = (r.overhead_pct, r.delta_bytes) {
            println!("overhead       {d} bytes ({p:.4}%)");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Genbench(a) => cmd_genbench(a),
        Command::Report(a) => cmd_report(a),
        Command::AnalyzeSize(a) => cmd_analyze_size(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("cfisim: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
