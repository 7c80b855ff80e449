use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use sempe::bench::{self, BenchMode, BenchSpec, Workload};
use sempe::isa::{self, DataLayout, Inputs};
use sempe::machine::{self, ExecutionResult, MachineConfig};
use sempe::seclang::{self, CompileMode, CompileOptions};
use sempe::trace::{self, NullSink, SecretDomain};
use sempe::Mode;

create_exception!(sempe_py, CompileError, PyException);
create_exception!(sempe_py, CompileRejected, CompileError);

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn compile_err(e: seclang::CompileError) -> PyErr {
    match e {
        seclang::CompileError::Rejected { .. } => CompileRejected::new_err(e.to_string()),
        other => CompileError::new_err(other.to_string()),
    }
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    s.parse().map_err(value_err)
}

/// Builds a machine configuration from `{"drain_penalty": 20, ...}`.
fn machine_config(config: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<MachineConfig> {
    let mut text = String::new();
    for (k, v) in config.unwrap_or_default() {
        text.push_str(&format!("{k}={}\n", v.str()?));
    }
    MachineConfig::from_kv_str(&text).map_err(value_err)
}

/// A decoded or assembled machine program.
#[pyclass(name = "Program", module = "sempe_py", skip_from_py_object)]
#[derive(Clone)]
struct PyProgram {
    inner: isa::Program,
}

#[pymethods]
impl PyProgram {
    #[staticmethod]
    fn assemble(text: &str) -> PyResult<Self> {
        isa::assemble(text).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Decodes a binary image; `mode="legacy"` ignores secure prefixes.
    #[staticmethod]
    #[pyo3(signature = (data, mode = "sempe"))]
    fn decode(data: &[u8], mode: &str) -> PyResult<Self> {
        isa::decode(data, parse_mode(mode)?).map(|inner| Self { inner }).map_err(value_err)
    }

    fn encode<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let image = isa::encode(&self.inner).map_err(value_err)?;
        Ok(PyBytes::new(py, &image.bytes))
    }

    fn to_asm(&self) -> String {
        isa::disassemble(&self.inner)
    }

    fn legacy_view(&self) -> Self {
        Self { inner: self.inner.legacy_view() }
    }

    #[getter]
    fn secure_branch_count(&self) -> usize {
        self.inner.secure_branch_count()
    }

    #[getter]
    fn eosjmp_count(&self) -> usize {
        self.inner.eosjmp_count()
    }

    #[getter]
    fn data_size(&self) -> usize {
        self.inner.data_size
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner.without_debug_info() == other.inner.without_debug_info()
    }

    fn __repr__(&self) -> String {
        format!("Program({} instructions, {} secure branches)", self.inner.len(), self.inner.secure_branch_count())
    }
}

/// Output of `compile`: the program plus where its globals live.
#[pyclass(name = "CompiledProgram", module = "sempe_py")]
struct PyCompiled {
    #[pyo3(get)]
    program: PyProgram,
    #[pyo3(get)]
    mode: String,
    layout: DataLayout,
}

#[pymethods]
impl PyCompiled {
    #[getter]
    fn globals(&self) -> Vec<String> {
        self.layout.globals.iter().map(|g| g.name.clone()).collect()
    }

    #[getter]
    fn secrets(&self) -> Vec<String> {
        self.layout.secret_names()
    }

    fn initial_memory(&self, inputs: Inputs) -> PyResult<Vec<u64>> {
        self.layout.initial_memory(&inputs).map_err(value_err)
    }

    fn read_globals(&self, memory: Vec<u64>) -> BTreeMap<String, Vec<i64>> {
        self.layout.read_globals(&memory)
    }
}

/// Final state and counters of one run.
#[pyclass(name = "RunResult", module = "sempe_py", get_all)]
struct PyRunResult {
    cycles: u64,
    committed_instructions: u64,
    /// Trap name, or None.
    trap: Option<String>,
    trap_pc: Option<usize>,
    registers: Vec<i64>,
    memory: Vec<u64>,
    drains: u64,
    secure_regions: u64,
    max_depth: usize,
    spm_bytes_written: u64,
    spm_bytes_read: u64,
    /// Global values, when run from a compiled program.
    globals: Option<BTreeMap<String, Vec<i64>>>,
}

impl PyRunResult {
    fn new(r: ExecutionResult, layout: Option<&DataLayout>) -> Self {
        Self {
            globals: layout.map(|l| l.read_globals(&r.final_mem)),
            cycles: r.cycles,
            committed_instructions: r.committed_instructions,
            trap: r.trap.map(|t| t.kind.name().to_string()),
            trap_pc: r.trap.map(|t| t.pc),
            registers: r.final_regs.iter().map(|&v| v as i64).collect(),
            memory: r.final_mem,
            drains: r.stats.drains,
            secure_regions: r.stats.secure_regions,
            max_depth: r.stats.max_depth,
            spm_bytes_written: r.stats.spm_bytes_written,
            spm_bytes_read: r.stats.spm_bytes_read,
        }
    }
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!("RunResult(cycles={}, trap={:?})", self.cycles, self.trap)
    }
}

/// Compiles SecLang source. `mode` is "sempe", "cte" or "plain".
#[pyfunction]
#[pyo3(signature = (source, mode = "sempe", registers = 16, capacity = 30, collapse = false, privatize_all = false))]
fn compile(
    source: &str,
    mode: &str,
    registers: usize,
    capacity: usize,
    collapse: bool,
    privatize_all: bool,
) -> PyResult<PyCompiled> {
    let mode: CompileMode = mode.parse().map_err(value_err)?;
    let opts = CompileOptions { mode, register_count: registers, jb_capacity: capacity, collapse, privatize_all };
    let c = seclang::compile(source, &opts).map_err(compile_err)?;
    Ok(PyCompiled { program: PyProgram { inner: c.program }, mode: mode.as_str().to_string(), layout: c.layout })
}

/// Runs a bare program over `memory` (zero-filled to the program's size).
#[pyfunction]
#[pyo3(signature = (program, memory = None, mode = "sempe", config = None))]
fn run(
    program: &PyProgram,
    memory: Option<Vec<u64>>,
    mode: &str,
    config: Option<BTreeMap<String, Bound<'_, PyAny>>>,
) -> PyResult<PyRunResult> {
    let config = machine_config(config)?;
    let r = machine::run(&program.inner, &memory.unwrap_or_default(), &[], parse_mode(mode)?, &config, NullSink)
        .map_err(value_err)?;
    Ok(PyRunResult::new(r, None))
}

/// Runs a compiled program with named global inputs.
#[pyfunction]
#[pyo3(signature = (compiled, inputs = None, mode = "sempe", config = None))]
fn run_compiled(
    compiled: &PyCompiled,
    inputs: Option<Inputs>,
    mode: &str,
    config: Option<BTreeMap<String, Bound<'_, PyAny>>>,
) -> PyResult<PyRunResult> {
    let config = machine_config(config)?;
    let mem = compiled.initial_memory(inputs.unwrap_or_default())?;
    let r = machine::run(&compiled.program.inner, &mem, &[], parse_mode(mode)?, &config, NullSink).map_err(value_err)?;
    Ok(PyRunResult::new(r, Some(&compiled.layout)))
}

/// Attacker-visible observation of one run, in the text format `trace-diff`
/// reads.
#[pyfunction]
#[pyo3(signature = (compiled, inputs = None, mode = "sempe", config = None))]
fn observe(
    compiled: &PyCompiled,
    inputs: Option<Inputs>,
    mode: &str,
    config: Option<BTreeMap<String, Bound<'_, PyAny>>>,
) -> PyResult<String> {
    let config = machine_config(config)?;
    let mem = compiled.initial_memory(inputs.unwrap_or_default())?;
    let (obs, _) = trace::observe(&compiled.program.inner, &mem, &[], parse_mode(mode)?, &config).map_err(value_err)?;
    Ok(obs.to_text())
}

/// Enumerates secret assignments and compares observations. Secrets not in
/// `secrets` range over {0, 1}. Returns `(indistinguishable, report_text)`.
#[pyfunction]
#[pyo3(signature = (compiled, secrets = None, inputs = None, mode = "sempe", cap = 256, config = None))]
fn leakcheck(
    compiled: &PyCompiled,
    secrets: Option<Inputs>,
    inputs: Option<Inputs>,
    mode: &str,
    cap: usize,
    config: Option<BTreeMap<String, Bound<'_, PyAny>>>,
) -> PyResult<(bool, String)> {
    let config = machine_config(config)?;
    let given = secrets.unwrap_or_default();
    let domains: Vec<SecretDomain> = compiled
        .layout
        .globals
        .iter()
        .filter(|g| g.secret && !g.is_array)
        .map(|g| SecretDomain::new(g.name.clone(), given.get(&g.name).cloned().unwrap_or_else(|| vec![0, 1])))
        .collect();
    let report = trace::leakage_scan(
        &compiled.program.inner,
        &compiled.layout,
        &inputs.unwrap_or_default(),
        &domains,
        parse_mode(mode)?,
        &config,
        cap,
    )
    .map_err(value_err)?;
    Ok((report.indistinguishable(), report.render_text()))
}

/// SecLang source of one microbenchmark.
#[pyfunction]
#[pyo3(signature = (workload, width, iterations = bench::DEFAULT_ITERATIONS, size = None, seed = 1, capacity = 30))]
fn generate_benchmark(
    workload: &str,
    width: usize,
    iterations: usize,
    size: Option<usize>,
    seed: u64,
    capacity: usize,
) -> PyResult<String> {
    let w: Workload = workload.parse().map_err(value_err)?;
    let spec = BenchSpec { iterations, workload_size: size.unwrap_or(w.default_size()), ..BenchSpec::new(w, width, seed) };
    bench::generate(&spec, capacity).map_err(value_err)
}

/// Runs the suite and returns its CSV.
#[pyfunction]
#[pyo3(signature = (workloads = None, widths = None, modes = None, iterations = bench::DEFAULT_ITERATIONS, seed = 1))]
fn run_suite(
    workloads: Option<Vec<String>>,
    widths: Option<Vec<usize>>,
    modes: Option<Vec<String>>,
    iterations: usize,
    seed: u64,
) -> PyResult<String> {
    let workloads: Vec<Workload> = match workloads {
        Some(ws) => ws.iter().map(|w| w.parse().map_err(value_err)).collect::<PyResult<_>>()?,
        None => Workload::ALL.to_vec(),
    };
    let modes: Vec<BenchMode> = match modes {
        Some(ms) => ms.iter().map(|m| m.parse().map_err(value_err)).collect::<PyResult<_>>()?,
        None => BenchMode::ALL.to_vec(),
    };
    let widths = widths.unwrap_or_else(|| bench::DEFAULT_WIDTHS.to_vec());
    let specs: Vec<BenchSpec> = workloads
        .iter()
        .flat_map(|&w| widths.iter().map(move |&width| BenchSpec { iterations, ..BenchSpec::new(w, width, seed) }))
        .collect();
    let results = bench::run_suite(&specs, &modes, &MachineConfig::default()).map_err(value_err)?;
    Ok(bench::to_csv(&results))
}

#[pymodule]
fn sempe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProgram>()?;
    m.add_class::<PyCompiled>()?;
    m.add_class::<PyRunResult>()?;
    m.add("CompileError", m.py().get_type::<CompileError>())?;
    m.add("CompileRejected", m.py().get_type::<CompileRejected>())?;
    m.add("NESTED_IF", seclang::NESTED_IF)?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_compiled, m)?)?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    m.add_function(wrap_pyfunction!(leakcheck, m)?)?;
    m.add_function(wrap_pyfunction!(generate_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
