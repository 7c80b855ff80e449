//! Nested-branch microbenchmarks.
//!
//! Each generated program runs `I` iterations of a chain of `W` secret
//! branches. Branch `k` keeps one workload instance on its fall-through
//! (then) arm and branch `k+1` on its taken (else) arm; the last branch has
//! an instance on both arms, and its else arm does one extra statement so
//! the two arms differ in length. A legacy run executes one instance per
//! iteration, a SeMPE run all `W+1`.

mod report;

pub use report::{plot_data, summary_table, to_csv, CSV_HEADER};

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::isa::{decode, encode, Inputs, Program};
use crate::machine::{self, MachineConfig, TrapKind};
use crate::seclang::{self, CompileError, CompileMode, CompileOptions, CompiledProgram};
use crate::trace::{scan_assignments, NullSink, ScanError, ScanReport};
use crate::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Workload {
    Fibonacci,
    Ones,
    Quicksort,
    Queens,
}

impl Workload {
    pub const ALL: [Workload; 4] = [Workload::Fibonacci, Workload::Ones, Workload::Quicksort, Workload::Queens];

    pub fn as_str(self) -> &'static str {
        match self {
            Workload::Fibonacci => "fibonacci",
            Workload::Ones => "ones",
            Workload::Quicksort => "quicksort",
            Workload::Queens => "queens",
        }
    }

    /// Fibonacci terms, bit-count array length, sort array length, or
    /// queens placements examined.
    pub fn default_size(self) -> usize {
        match self {
            Workload::Fibonacci => 300,
            Workload::Ones => 32,
            Workload::Quicksort => 24,
            Workload::Queens => 256,
        }
    }

    /// SecLang function `work(x)` computing one instance.
    fn function(self, n: usize) -> String {
        match self {
            Workload::Fibonacci => format!(
                "fn work(x) {{
    let a = x & 7;
    let b = 1;
    for t in 0..{n} {{
        let c = a + b;
        a = b;
        b = c;
    }}
    return b;
}}
"
            ),
            Workload::Ones => format!(
                "fn work(x) {{
    let v[{n}];
    let r = x;
    for i in 0..{n} {{
        r = r * 1103515245 + 12345;
        v[i] = r >> 16;
    }}
    let count = 0;
    for i in 0..{n} {{
        let w = v[i];
        for b in 0..8 {{
            count = count + (w & 1);
            w = w >> 1;
        }}
    }}
    return count;
}}
"
            ),
            Workload::Quicksort => format!(
                "fn work(x) {{
    let a[{n}];
    let r = x;
    for i in 0..{n} {{
        r = r * 1103515245 + 12345;
        a[i] = (r >> 16) & 1023;
    }}
    let st[{stack}];
    st[0] = 0;
    st[1] = {last};
    let sp = 2;
    while (sp > 0) {{
        sp = sp - 2;
        let lo = st[sp];
        let hi = st[sp + 1];
        if (lo < hi) {{
            let pivot = a[hi];
            let i = lo;
            for j in lo..hi {{
                let aj = a[j];
                if (aj < pivot) {{
                    a[j] = a[i];
                    a[i] = aj;
                    i = i + 1;
                }}
            }}
            a[hi] = a[i];
            a[i] = pivot;
            st[sp] = lo;
            st[sp + 1] = i - 1;
            st[sp + 2] = i + 1;
            st[sp + 3] = hi;
            sp = sp + 4;
        }}
    }}
    let h = 0;
    for i in 0..{n} {{
        h = h * 31 + a[i];
    }}
    return h;
}}
",
                stack = 4 * n + 4,
                last = n as i64 - 1
            ),
            Workload::Queens => {
                let mut checks = String::new();
                for i in 0..4 {
                    for j in i + 1..4 {
                        let d = j - i;
                        let _ = writeln!(
                            checks,
                            "        ok = ok & (q{i} != q{j}) & (q{i} - q{j} != {d}) & (q{j} - q{i} != {d});"
                        );
                    }
                }
                format!(
                    "fn work(x) {{
    let solutions = 0;
    for p in 0..{n} {{
        let code = (p + x) & 255;
        let q0 = code & 3;
        let q1 = (code >> 2) & 3;
        let q2 = (code >> 4) & 3;
        let q3 = (code >> 6) & 3;
        let ok = 1;
{checks}        solutions = solutions + ok;
    }}
    return solutions;
}}
"
                )
            }
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Workload::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| format!("unknown workload `{s}` (expected fibonacci, ones, quicksort or queens)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BenchSpec {
    pub workload: Workload,
    pub iterations: usize,
    pub width: usize,
    pub workload_size: usize,
    pub seed: u64,
}

pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_WIDTHS: [usize; 4] = [1, 2, 5, 10];

impl BenchSpec {
    pub fn new(workload: Workload, width: usize, seed: u64) -> Self {
        Self { workload, iterations: DEFAULT_ITERATIONS, width, workload_size: workload.default_size(), seed }
    }

    pub fn secret_names(&self) -> Vec<String> {
        (1..=self.width).map(|k| format!("s{k}")).collect()
    }

    /// Public input `pin` derived from the seed.
    pub fn public_input(&self) -> i64 {
        ChaCha8Rng::seed_from_u64(self.seed).gen_range(1..1000)
    }

    /// Inputs for one secret vector (one value per branch).
    pub fn inputs(&self, secrets: &[i64]) -> Inputs {
        let mut inputs: Inputs = self.secret_names().into_iter().zip(secrets).map(|(n, v)| (n, vec![*v])).collect();
        inputs.insert("pin".into(), vec![self.public_input()]);
        inputs
    }

    /// `count` secret vectors over {0, 1}. The first is random; the second
    /// and third are all ones and all zeros, which take the shortest and
    /// longest legacy paths.
    pub fn secret_vectors(&self, count: usize) -> Vec<Vec<i64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5eed);
        let mut random = || (0..self.width).map(|_| rng.gen_range(0..2)).collect::<Vec<i64>>();
        let mut out = vec![random(), vec![1; self.width], vec![0; self.width]];
        while out.len() < count {
            out.push(random());
        }
        out.truncate(count);
        out
    }
}

/// The standard grid: every workload at W in {1, 2, 5, 10}.
pub fn default_grid(seed: u64) -> Vec<BenchSpec> {
    Workload::ALL
        .iter()
        .flat_map(|&w| DEFAULT_WIDTHS.iter().map(move |&width| BenchSpec::new(w, width, seed)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("width {width} needs {width} nested secure branches but the jbTable holds {capacity}")]
    WidthExceedsCapacity { width: usize, capacity: usize },
    #[error("width must be at least 1")]
    ZeroWidth,
    #[error("iterations and workload size must be at least 1")]
    EmptyWorkload,
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Scan(#[from] ScanError),
}

fn instance(k: usize, indent: &str, extra: bool) -> String {
    let mut s = format!("{indent}let r{k} = work(pin + it * 7 + {k});\n{indent}out = out + r{k};\n");
    if extra {
        let _ = writeln!(s, "{indent}out = out + 1;");
    }
    s
}

/// SecLang source for `spec`. `capacity` is the jbTable size the program
/// must fit.
pub fn generate(spec: &BenchSpec, capacity: usize) -> Result<String, BenchError> {
    if spec.width == 0 {
        return Err(BenchError::ZeroWidth);
    }
    if spec.iterations == 0 || spec.workload_size == 0 {
        return Err(BenchError::EmptyWorkload);
    }
    if spec.width > capacity {
        return Err(BenchError::WidthExceedsCapacity { width: spec.width, capacity });
    }
    let w = spec.width;
    let mut src = format!(
        "// {} microbenchmark: I={} W={} size={} seed={}\n@secret {};\nvar out, pin;\n\n{}\nfn main() {{\n    for it in 0..{} {{\n",
        spec.workload,
        spec.iterations,
        w,
        spec.workload_size,
        spec.seed,
        spec.secret_names().join(", "),
        spec.workload.function(spec.workload_size),
        spec.iterations
    );
    for k in 0..w {
        let pad = "    ".repeat(k + 2);
        let _ = writeln!(src, "{pad}if (s{}) {{", k + 1);
        src.push_str(&instance(k, &format!("{pad}    "), false));
        let _ = writeln!(src, "{pad}}} else {{");
    }
    src.push_str(&instance(w, &"    ".repeat(w + 2), true));
    for k in (0..w).rev() {
        let _ = writeln!(src, "{}}}", "    ".repeat(k + 2));
    }
    src.push_str("    }\n}\n");
    Ok(src)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchMode {
    /// Plain code on a legacy machine.
    Baseline,
    /// Instrumented code on a SeMPE machine.
    Sempe,
    /// CTE-transformed code on a legacy machine.
    Cte,
    /// Instrumented binary decoded and run by a legacy machine.
    Legacy,
}

impl BenchMode {
    pub const ALL: [BenchMode; 4] = [BenchMode::Baseline, BenchMode::Sempe, BenchMode::Cte, BenchMode::Legacy];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Baseline => "baseline",
            BenchMode::Sempe => "sempe",
            BenchMode::Cte => "cte",
            BenchMode::Legacy => "legacy",
        }
    }

    /// Paths an ideal implementation of this mode executes.
    pub fn ideal_paths(self, width: usize) -> usize {
        match self {
            BenchMode::Baseline | BenchMode::Legacy => 1,
            BenchMode::Sempe | BenchMode::Cte => width + 1,
        }
    }

    pub fn machine_mode(self) -> Mode {
        if self == BenchMode::Sempe {
            Mode::Sempe
        } else {
            Mode::Legacy
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown bench mode `{s}` (expected baseline, sempe, cte or legacy)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    Rejected(String),
    Trap(TrapKind),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        *self == Status::Ok
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => f.write_str("ok"),
            Status::Rejected(kind) => write!(f, "rejected:{kind}"),
            Status::Trap(kind) => write!(f, "trap:{kind}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub spec: BenchSpec,
    pub mode: BenchMode,
    pub status: Status,
    pub cycles: u64,
    pub committed_instructions: u64,
    /// Cycles over the baseline's for the same spec and inputs.
    pub overhead_ratio: Option<f64>,
    pub ideal_paths: usize,
    pub ratio_vs_ideal: Option<f64>,
    /// Final globals, empty unless the run completed.
    pub outputs: BTreeMap<String, Vec<i64>>,
}

/// Program for `mode`, or the compiler's rejection.
pub fn build(spec: &BenchSpec, mode: BenchMode, config: &MachineConfig) -> Result<CompiledProgram, BenchError> {
    let src = generate(spec, config.jb_capacity)?;
    let compile_mode = match mode {
        BenchMode::Baseline => CompileMode::Plain,
        BenchMode::Sempe | BenchMode::Legacy => CompileMode::Sempe,
        BenchMode::Cte => CompileMode::Cte,
    };
    let opts = CompileOptions { jb_capacity: config.jb_capacity, ..CompileOptions::with_mode(compile_mode) };
    let mut compiled = seclang::compile(&src, &opts)?;
    if mode == BenchMode::Legacy {
        let image = encode(&compiled.program).expect("compiler output encodes");
        let decoded: Program = decode(&image.bytes, Mode::Legacy).expect("encoder output decodes");
        compiled.program = Program {
            register_count: compiled.program.register_count,
            data_size: compiled.program.data_size,
            ..decoded
        };
    }
    Ok(compiled)
}

fn run_one(spec: &BenchSpec, mode: BenchMode, secrets: &[i64], config: &MachineConfig) -> Result<BenchResult, BenchError> {
    let mut result = BenchResult {
        spec: *spec,
        mode,
        status: Status::Ok,
        cycles: 0,
        committed_instructions: 0,
        overhead_ratio: None,
        ideal_paths: mode.ideal_paths(spec.width),
        ratio_vs_ideal: None,
        outputs: BTreeMap::new(),
    };
    let compiled = match build(spec, mode, config) {
        Ok(c) => c,
        Err(BenchError::Compile(CompileError::Rejected { kind, .. })) => {
            result.status = Status::Rejected(kind.to_string());
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let mem = compiled.layout.initial_memory(&spec.inputs(secrets)).expect("generated inputs fit the layout");
    let run = machine::run(&compiled.program, &mem, &[], mode.machine_mode(), config, NullSink)
        .map_err(|e| BenchError::Scan(ScanError::Machine(e)))?;
    result.cycles = run.cycles;
    result.committed_instructions = run.committed_instructions;
    match run.trap {
        Some(t) => result.status = Status::Trap(t.kind),
        None => result.outputs = compiled.layout.read_globals(&run.final_mem),
    }
    Ok(result)
}

/// Runs every spec in every mode with the spec's first secret vector.
/// Specs run in parallel; results come back in spec order, modes in the
/// order given.
pub fn run_suite(specs: &[BenchSpec], modes: &[BenchMode], config: &MachineConfig) -> Result<Vec<BenchResult>, BenchError> {
    for s in specs {
        generate(s, config.jb_capacity)?;
    }
    let per_spec: Vec<Vec<BenchResult>> = specs
        .par_iter()
        .map(|spec| {
            let secrets = &spec.secret_vectors(1)[0];
            let baseline = run_one(spec, BenchMode::Baseline, secrets, config)?;
            let mut rows = Vec::with_capacity(modes.len());
            for &mode in modes {
                let mut r = if mode == BenchMode::Baseline {
                    baseline.clone()
                } else {
                    run_one(spec, mode, secrets, config)?
                };
                if r.status.is_ok() && baseline.status.is_ok() && baseline.cycles > 0 {
                    let ratio = r.cycles as f64 / baseline.cycles as f64;
                    r.overhead_ratio = Some(ratio);
                    r.ratio_vs_ideal = Some(ratio / r.ideal_paths as f64);
                }
                rows.push(r);
            }
            Ok(rows)
        })
        .collect::<Result<_, BenchError>>()?;
    Ok(per_spec.into_iter().flatten().collect())
}

/// Leakage scan of `spec` in `mode` over `vectors` secret vectors.
pub fn scan(spec: &BenchSpec, mode: BenchMode, vectors: usize, config: &MachineConfig) -> Result<ScanReport, BenchError> {
    let compiled = build(spec, mode, config)?;
    let names = spec.secret_names();
    let assignments = spec
        .secret_vectors(vectors)
        .into_iter()
        .map(|v| names.iter().cloned().zip(v).collect())
        .collect();
    let publics: Inputs = [("pin".to_string(), vec![spec.public_input()])].into_iter().collect();
    Ok(scan_assignments(
        &compiled.program,
        &compiled.layout,
        &publics,
        assignments,
        mode.machine_mode(),
        config,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seclang::interp::{interpret, DEFAULT_FUEL};

    #[test]
    fn generation_is_deterministic_and_nested() {
        let spec = BenchSpec::new(Workload::Fibonacci, 3, 7);
        let a = generate(&spec, 30).unwrap();
        assert_eq!(a, generate(&spec, 30).unwrap());
        let c = seclang::compile(&a, &CompileOptions::default()).unwrap();
        assert_eq!(c.program.secure_branch_count(), 3);
        assert_eq!(c.program.eosjmp_count(), 3);
        assert_eq!(a.matches("work(pin").count(), 4);
    }

    #[test]
    fn width_over_capacity_is_an_error() {
        let spec = BenchSpec::new(Workload::Ones, 31, 0);
        assert_eq!(generate(&spec, 30), Err(BenchError::WidthExceedsCapacity { width: 31, capacity: 30 }));
        assert_eq!(generate(&BenchSpec::new(Workload::Ones, 0, 0), 30), Err(BenchError::ZeroWidth));
    }

    #[test]
    fn secret_vectors_cover_extremes() {
        let v = BenchSpec::new(Workload::Queens, 4, 3).secret_vectors(8);
        assert_eq!(v.len(), 8);
        assert!(v.contains(&vec![0; 4]) && v.contains(&vec![1; 4]));
        assert!(v.iter().flatten().all(|x| *x == 0 || *x == 1));
    }

    #[test]
    fn workloads_compute_sensible_values() {
        for w in Workload::ALL {
            let spec = BenchSpec { iterations: 1, ..BenchSpec::new(w, 1, 1) };
            let ast = seclang::parse(&generate(&spec, 30).unwrap()).unwrap();
            let out = interpret(&ast, &spec.inputs(&[1]), DEFAULT_FUEL).unwrap();
            assert_ne!(out["out"][0], 0, "{w}");
        }
        // all 256 placements of a 4x4 board hold exactly 2 solutions
        let spec = BenchSpec { iterations: 1, ..BenchSpec::new(Workload::Queens, 1, 1) };
        let ast = seclang::parse(&generate(&spec, 30).unwrap()).unwrap();
        assert_eq!(interpret(&ast, &spec.inputs(&[1]), DEFAULT_FUEL).unwrap()["out"][0], 2);
    }

    #[test]
    fn quicksort_sorts() {
        let src = format!("var out;\n{}fn main() {{ let r = work(99); out = r; }}", Workload::Quicksort.function(8));
        let sorted_src = src.replace("    let h = 0;", "    let ok = 1;\n    for i in 1..8 { ok = ok & (a[i - 1] <= a[i]); }\n    let h = 0;").replace("return h;", "return ok;");
        let ast = seclang::parse(&sorted_src).unwrap();
        assert_eq!(interpret(&ast, &Inputs::new(), DEFAULT_FUEL).unwrap()["out"][0], 1);
    }

    #[test]
    fn cte_rejects_only_quicksort() {
        let cfg = MachineConfig::default();
        for w in Workload::ALL {
            let r = build(&BenchSpec::new(w, 2, 0), BenchMode::Cte, &cfg);
            assert_eq!(r.is_err(), w == Workload::Quicksort, "{w}");
        }
    }
}
