//! The `sempe` command line.
//!
//! Exit codes: 0 success (or indistinguishable), 1 usage or I/O error,
//! 2 compile rejection, 3 machine trap, 4 distinguishable traces.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchMode, BenchSpec, Workload};
use crate::isa::{self, DataLayout, Inputs, Program};
use crate::machine::{self, MachineConfig};
use crate::seclang::{self, CompileError, CompileMode, CompileOptions};
use crate::trace::{self, Observation, SecretDomain, DEFAULT_SCAN_CAP};
use crate::Mode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_TRAP: i32 = 3;
pub const EXIT_DISTINGUISHABLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sempe", version, about = "Secure multi-path execution toolchain")]
pub struct Cli {
    /// Print extra detail (resolved programs, full traces).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble a text program and write its binary encoding.
    Asm(AsmArgs),
    /// Compile SecLang to `.asm`, `.bin` and a `.map` sidecar.
    Compile(CompileArgs),
    /// Execute a `.bin` or `.asm` program.
    Run(RunArgs),
    /// Check that no two secret assignments are distinguishable.
    Leakcheck(LeakArgs),
    /// Run the microbenchmark suite.
    Bench(BenchArgs),
    /// Compare two observation files.
    TraceDiff(DiffArgs),
}

#[derive(Debug, Args)]
pub struct MachineArgs {
    /// key=value machine configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set drain_penalty=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl MachineArgs {
    fn load(&self) -> Result<MachineConfig, Failure> {
        let mut text = match &self.config {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        for kv in &self.set {
            text.push('\n');
            text.push_str(kv);
        }
        MachineConfig::from_kv_str(&text).map_err(|e| Failure::usage(format!("configuration: {e}")))
    }
}

#[derive(Debug, Args)]
pub struct AsmArgs {
    pub input: PathBuf,
    /// Output path (default: input with `.bin`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "lowering", multiple = false)]
pub struct LoweringFlags {
    /// Secret branches become secure regions (default).
    #[arg(long, group = "lowering")]
    pub sempe: bool,
    /// Secret branches are removed by the constant-time-expression transform.
    #[arg(long, group = "lowering")]
    pub cte: bool,
    /// No instrumentation.
    #[arg(long, group = "lowering")]
    pub plain: bool,
}

impl LoweringFlags {
    fn mode(&self) -> CompileMode {
        if self.cte {
            CompileMode::Cte
        } else if self.plain {
            CompileMode::Plain
        } else {
            CompileMode::Sempe
        }
    }
}

#[derive(Debug, Args)]
pub struct CompileFlags {
    #[command(flatten)]
    pub lowering: LoweringFlags,
    /// General registers available to the compiler.
    #[arg(long, default_value_t = isa::DEFAULT_REGISTERS)]
    pub registers: usize,
    /// jbTable entries, i.e. the deepest allowed secure nesting.
    #[arg(long, default_value_t = machine::DEFAULT_JB_CAPACITY)]
    pub capacity: usize,
    /// Merge directly nested secret `if`s.
    #[arg(long)]
    pub collapse: bool,
    /// Keep every local in memory so the compiler privatizes it.
    #[arg(long)]
    pub privatize_all: bool,
}

impl CompileFlags {
    fn options(&self) -> CompileOptions {
        CompileOptions {
            mode: self.lowering.mode(),
            register_count: self.registers,
            jb_capacity: self.capacity,
            collapse: self.collapse,
            privatize_all: self.privatize_all,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub flags: CompileFlags,
    /// Output path stem (default: input without extension).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `.bin` (decoded according to `--mode`) or `.asm`.
    pub input: PathBuf,
    #[arg(long, default_value = "sempe")]
    pub mode: Mode,
    /// Sidecar written by `compile` (default: input with `.map`, if present).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Global input, e.g. `--input key=5` or `--input table=1,2,3`.
    #[arg(long = "input", value_name = "NAME=VALUES")]
    pub inputs: Vec<String>,
    /// Data memory words when there is no map.
    #[arg(long)]
    pub mem: Option<usize>,
    /// Write the observation trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub machine: MachineArgs,
}

#[derive(Debug, Args)]
pub struct LeakArgs {
    /// SecLang source.
    pub input: PathBuf,
    /// Machine the compiled program runs on.
    #[arg(long, default_value = "sempe")]
    pub mode: Mode,
    #[command(flatten)]
    pub flags: CompileFlags,
    /// Domain of one secret, e.g. `--secret key=0,1,7`; secrets not listed
    /// range over {0, 1}.
    #[arg(long = "secret", value_name = "NAME=VALUES")]
    pub secrets: Vec<String>,
    /// Public input held fixed across the scan.
    #[arg(long = "input", value_name = "NAME=VALUES")]
    pub inputs: Vec<String>,
    /// Largest number of assignments to enumerate.
    #[arg(long, default_value_t = DEFAULT_SCAN_CAP)]
    pub cap: usize,
    #[command(flatten)]
    pub machine: MachineArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Workloads to run (default: all).
    #[arg(long = "workload")]
    pub workloads: Vec<Workload>,
    /// Widths W (default: 1, 2, 5, 10).
    #[arg(long = "width")]
    pub widths: Vec<usize>,
    /// Modes (default: baseline, sempe, cte, legacy).
    #[arg(long = "mode")]
    pub modes: Vec<BenchMode>,
    #[arg(long, default_value_t = bench::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// Workload size (default: per workload).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write (W, ratio) series per workload and mode here.
    #[arg(long)]
    pub emit_plotdata: Option<PathBuf>,
    /// Print the generated SecLang for the first spec and exit.
    #[arg(long)]
    pub print_source: bool,
    #[command(flatten)]
    pub machine: MachineArgs,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// `text` or `kv`.
    #[arg(long, default_value = "text")]
    pub format: String,
}

/// Everything `compile` knows that a `.bin` cannot carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramMap {
    pub source: String,
    pub mode: String,
    pub register_count: usize,
    pub data_size: usize,
    pub layout: DataLayout,
    /// Source line of each instruction (0 = compiler-generated).
    pub lines: Vec<u32>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<CompileError> for Failure {
    fn from(e: CompileError) -> Self {
        let code = if matches!(e, CompileError::Rejected { .. }) { EXIT_REJECTED } else { EXIT_USAGE };
        Self { code, message: e.to_string() }
    }
}

fn read_text(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
}

fn write(p: &Path, data: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(p, data).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
}

/// `name=v1,v2,...`
pub fn parse_assignment(s: &str) -> Result<(String, Vec<i64>), String> {
    let (name, values) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUES, got `{s}`"))?;
    let values = values
        .split(',')
        .map(|v| {
            let v = v.trim();
            match v.strip_prefix("0x") {
                Some(hex) => i64::from_str_radix(hex, 16),
                None => v.parse(),
            }
            .map_err(|_| format!("bad value `{v}` for `{name}`"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_string(), values))
}

fn parse_inputs(items: &[String]) -> Result<Inputs, Failure> {
    items.iter().map(|s| parse_assignment(s).map_err(Failure::usage)).collect()
}

fn cmd_asm(a: &AsmArgs) -> Result<i32, Failure> {
    let program = isa::assemble(&read_text(&a.input)?).map_err(|e| Failure::usage(e.to_string()))?;
    let image = isa::encode(&program).map_err(|e| Failure::usage(e.to_string()))?;
    let out = a.output.clone().unwrap_or_else(|| a.input.with_extension("bin"));
    write(&out, &image.bytes)?;
    println!("{} instruction(s), {} byte(s) -> {}", program.len(), image.bytes.len(), out.display());
    for d in isa::validate(&program) {
        eprintln!("warning: {d}");
    }
    Ok(EXIT_OK)
}

fn cmd_compile(a: &CompileArgs, verbose: bool) -> Result<i32, Failure> {
    let src = read_text(&a.input)?;
    let opts = a.flags.options();
    let compiled = seclang::compile(&src, &opts)?;
    let stem = a.output.clone().unwrap_or_else(|| a.input.with_extension(""));
    let p = &compiled.program;
    let image = isa::encode(p).map_err(|e| Failure::usage(e.to_string()))?;
    let map = ProgramMap {
        source: a.input.display().to_string(),
        mode: opts.mode.as_str().to_string(),
        register_count: p.register_count,
        data_size: p.data_size,
        layout: compiled.layout.clone(),
        lines: p.instructions.iter().map(|i| i.source_line).collect(),
    };
    let json = serde_json::to_string_pretty(&map).expect("map serializes");
    write(&stem.with_extension("asm"), isa::disassemble(p))?;
    write(&stem.with_extension("bin"), &image.bytes)?;
    write(&stem.with_extension("map"), json + "\n")?;
    println!(
        "{}: {} instruction(s), {} secure branch(es), {} data word(s) -> {}.{{asm,bin,map}}",
        opts.mode.as_str(),
        p.len(),
        p.secure_branch_count(),
        p.data_size,
        stem.display()
    );
    if verbose {
        print!("{}", compiled.ast);
    }
    Ok(EXIT_OK)
}

fn load_program(path: &Path, mode: Mode) -> Result<Program, Failure> {
    if path.extension().is_some_and(|e| e == "asm") {
        return isa::assemble(&read_text(path)?).map_err(|e| Failure::usage(e.to_string()));
    }
    if path.extension().is_some_and(|e| e == "sl") {
        return Err(Failure::usage(format!("{} is SecLang source; run `sempe compile` first", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    isa::decode(&bytes, mode).map_err(|e| Failure::usage(e.to_string()))
}

fn cmd_run(a: &RunArgs) -> Result<i32, Failure> {
    let config = a.machine.load()?;
    let mut program = load_program(&a.input, a.mode)?;
    let map_path = a.map.clone().or_else(|| Some(a.input.with_extension("map")).filter(|p| p.exists()));
    let map: Option<ProgramMap> = match &map_path {
        Some(p) => Some(serde_json::from_str(&read_text(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let inputs = parse_inputs(&a.inputs)?;
    let mem = match &map {
        Some(m) => {
            program.register_count = m.register_count;
            program.data_size = m.data_size;
            for (ins, line) in program.instructions.iter_mut().zip(&m.lines) {
                ins.source_line = *line;
            }
            m.layout.initial_memory(&inputs).map_err(|e| Failure::usage(e.to_string()))?
        }
        None => {
            if !inputs.is_empty() {
                return Err(Failure::usage("--input needs a map (compile output) to locate globals"));
            }
            vec![0; a.mem.unwrap_or(program.data_size)]
        }
    };
    let (obs, result) =
        trace::observe(&program, &mem, &[], a.mode, &config).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(t) = &a.trace {
        write(t, obs.to_text())?;
    }
    println!("mode: {}", a.mode);
    println!("cycles: {}", result.cycles);
    println!("committed_instructions: {}", result.committed_instructions);
    let s = &result.stats;
    println!(
        "drains: {}  secure_regions: {}  max_depth: {}  spm_bytes_written: {}  spm_bytes_read: {}",
        s.drains, s.secure_regions, s.max_depth, s.spm_bytes_written, s.spm_bytes_read
    );
    let regs: Vec<String> = result.final_regs.iter().enumerate().map(|(i, v)| format!("r{i}={}", *v as i64)).collect();
    println!("registers: {}", regs.join(" "));
    if let Some(m) = &map {
        for (name, words) in m.layout.read_globals(&result.final_mem) {
            let words: Vec<String> = words.iter().map(i64::to_string).collect();
            println!("{name} = {}", words.join(","));
        }
    }
    match result.trap {
        Some(t) => {
            println!("trap: {t}");
            Ok(EXIT_TRAP)
        }
        None => {
            println!("trap: none");
            Ok(EXIT_OK)
        }
    }
}

fn cmd_leakcheck(a: &LeakArgs) -> Result<i32, Failure> {
    let config = a.machine.load()?;
    let compiled = seclang::compile(&read_text(&a.input)?, &a.flags.options())?;
    let given = parse_inputs(&a.secrets)?;
    let domains: Vec<SecretDomain> = compiled
        .layout
        .globals
        .iter()
        .filter(|g| g.secret && !g.is_array)
        .map(|g| SecretDomain::new(g.name.clone(), given.get(&g.name).cloned().unwrap_or_else(|| vec![0, 1])))
        .collect();
    if let Some(unknown) = given.keys().find(|n| !domains.iter().any(|d| &d.name == *n)) {
        return Err(Failure::usage(format!("`{unknown}` is not a scalar secret of the program")));
    }
    let publics = parse_inputs(&a.inputs)?;
    let report = trace::leakage_scan(&compiled.program, &compiled.layout, &publics, &domains, a.mode, &config, a.cap)
        .map_err(|e| Failure::usage(e.to_string()))?;
    print!("{}", report.render_text());
    if report.indistinguishable() {
        println!("indistinguishable");
        Ok(EXIT_OK)
    } else {
        println!("distinguishable");
        Ok(EXIT_DISTINGUISHABLE)
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<i32, Failure> {
    let config = a.machine.load()?;
    let workloads = if a.workloads.is_empty() { Workload::ALL.to_vec() } else { a.workloads.clone() };
    let widths = if a.widths.is_empty() { bench::DEFAULT_WIDTHS.to_vec() } else { a.widths.clone() };
    let modes = if a.modes.is_empty() { BenchMode::ALL.to_vec() } else { a.modes.clone() };
    let specs: Vec<BenchSpec> = workloads
        .iter()
        .flat_map(|&w| {
            widths.iter().map(move |&width| BenchSpec {
                iterations: a.iterations,
                workload_size: a.size.unwrap_or(w.default_size()),
                ..BenchSpec::new(w, width, a.seed)
            })
        })
        .collect();
    let bench_err = |e: bench::BenchError| match e {
        bench::BenchError::Compile(c) => Failure::from(c),
        other => Failure::usage(other.to_string()),
    };
    if a.print_source {
        let first = specs.first().ok_or_else(|| Failure::usage("no benchmark selected"))?;
        print!("{}", bench::generate(first, config.jb_capacity).map_err(bench_err)?);
        return Ok(EXIT_OK);
    }
    let results = bench::run_suite(&specs, &modes, &config).map_err(bench_err)?;
    let csv = bench::to_csv(&results);
    match &a.csv {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.emit_plotdata {
        write(p, bench::plot_data(&results))?;
    }
    let summary = bench::summary_table(&results);
    if a.csv.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    let trapped = results.iter().any(|r| matches!(r.status, bench::Status::Trap(_)));
    Ok(if trapped { EXIT_TRAP } else { EXIT_OK })
}

fn cmd_trace_diff(a: &DiffArgs) -> Result<i32, Failure> {
    let load = |p: &Path| -> Result<Observation, Failure> {
        read_text(p)?.parse().map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
    };
    let report = trace::compare(&load(&a.a)?, &load(&a.b)?);
    match a.format.as_str() {
        "text" => print!("{}", report.render_text()),
        "kv" => print!("{}", report.render_kv()),
        other => return Err(Failure::usage(format!("unknown format `{other}` (expected text or kv)"))),
    }
    Ok(if report.equal { EXIT_OK } else { EXIT_DISTINGUISHABLE })
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Asm(a) => cmd_asm(a),
        Command::Compile(a) => cmd_compile(a, cli.verbose),
        Command::Run(a) => cmd_run(a),
        Command::Leakcheck(a) => cmd_leakcheck(a),
        Command::Bench(a) => cmd_bench(a),
        Command::TraceDiff(a) => cmd_trace_diff(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
