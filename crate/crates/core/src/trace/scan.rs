use rayon::prelude::*;
use thiserror::Error;

use super::{compare, observe, DiffReport, Observation};
use crate::isa::{DataLayout, Inputs, LayoutError, Program};
use crate::machine::{MachineConfig, MachineError, Trap};
use crate::Mode;

pub const DEFAULT_SCAN_CAP: usize = 256;

/// Candidate values for one secret global.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretDomain {
    pub name: String,
    pub values: Vec<i64>,
}

impl SecretDomain {
    pub fn new(name: impl Into<String>, values: impl Into<Vec<i64>>) -> Self {
        Self { name: name.into(), values: values.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanError {
    #[error("{combinations} secret assignments exceed the cap of {cap}")]
    CapExceeded { combinations: usize, cap: usize },
    #[error("`{0}` is not a secret global of the program")]
    UnknownSecret(String),
    #[error("empty domain for `{0}`")]
    EmptyDomain(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Machine(#[from] MachineError),
}

/// An assignment whose observation differs from the first one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakPair {
    /// Index into [`ScanReport::assignments`]; always 0.
    pub a: usize,
    pub b: usize,
    pub diff: DiffReport,
    /// Instruction where the two runs part ways.
    pub site_pc: Option<usize>,
    pub source_line: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanReport {
    pub mode: Mode,
    pub assignments: Vec<Vec<(String, i64)>>,
    pub traps: Vec<Option<Trap>>,
    pub cycles: Vec<u64>,
    pub distinguishable: Vec<LeakPair>,
}

impl ScanReport {
    pub fn indistinguishable(&self) -> bool {
        self.distinguishable.is_empty()
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "mode {}: {} assignment(s), {} distinguishable from the first\n",
            self.mode,
            self.assignments.len(),
            self.distinguishable.len()
        );
        for leak in &self.distinguishable {
            let show = |i: usize| {
                self.assignments[i].iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(",")
            };
            out.push_str(&format!("  [{}] vs [{}]", show(leak.a), show(leak.b)));
            match (leak.site_pc, leak.source_line) {
                (Some(pc), Some(line)) if line > 0 => out.push_str(&format!(": diverge at pc {pc} (line {line})")),
                (Some(pc), _) => out.push_str(&format!(": diverge at pc {pc}")),
                _ => out.push_str(": total cycles differ"),
            }
            out.push('\n');
        }
        out
    }
}

fn divergence_site(diff: &DiffReport, a: &Observation) -> Option<usize> {
    let d = diff.first_divergence.as_ref()?;
    match (d.event_a, d.event_b) {
        (Some(x), Some(y)) if x.pc == y.pc => Some(x.pc),
        _ if d.index > 0 => Some(a.events[d.index - 1].pc),
        (Some(x), _) => Some(x.pc),
        (_, Some(y)) => Some(y.pc),
        _ => None,
    }
}

/// Runs every combination of secret values (first domain varies slowest)
/// and compares each observation against the first.
pub fn leakage_scan(
    program: &Program,
    layout: &DataLayout,
    public_inputs: &Inputs,
    domains: &[SecretDomain],
    mode: Mode,
    config: &MachineConfig,
    cap: usize,
) -> Result<ScanReport, ScanError> {
    for d in domains {
        match layout.symbol(&d.name) {
            Some(s) if s.secret => {}
            _ => return Err(ScanError::UnknownSecret(d.name.clone())),
        }
        if d.values.is_empty() {
            return Err(ScanError::EmptyDomain(d.name.clone()));
        }
    }
    let combinations = domains
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(d.values.len()))
        .unwrap_or(usize::MAX);
    if combinations > cap {
        return Err(ScanError::CapExceeded { combinations, cap });
    }

    let mut assignments: Vec<Vec<(String, i64)>> = vec![Vec::new()];
    for d in domains {
        assignments = assignments
            .into_iter()
            .flat_map(|prefix| {
                d.values.iter().map(move |&v| {
                    let mut a = prefix.clone();
                    a.push((d.name.clone(), v));
                    a
                })
            })
            .collect();
    }

    scan_assignments(program, layout, public_inputs, assignments, mode, config)
}

/// Like [`leakage_scan`] but over an explicit list of secret assignments,
/// for secret spaces too large to enumerate.
pub fn scan_assignments(
    program: &Program,
    layout: &DataLayout,
    public_inputs: &Inputs,
    assignments: Vec<Vec<(String, i64)>>,
    mode: Mode,
    config: &MachineConfig,
) -> Result<ScanReport, ScanError> {
    for name in assignments.iter().flatten().map(|(n, _)| n) {
        match layout.symbol(name) {
            Some(s) if s.secret => {}
            _ => return Err(ScanError::UnknownSecret(name.clone())),
        }
    }
    if assignments.is_empty() {
        return Err(ScanError::EmptyDomain("<assignments>".into()));
    }
    let runs: Vec<(Observation, Option<Trap>)> = assignments
        .par_iter()
        .map(|assignment| {
            let mut inputs = public_inputs.clone();
            for (name, v) in assignment {
                inputs.insert(name.clone(), vec![*v]);
            }
            let mem = layout.initial_memory(&inputs)?;
            let (obs, result) = observe(program, &mem, &[], mode, config)?;
            Ok((obs, result.trap))
        })
        .collect::<Result<_, ScanError>>()?;

    let first = &runs[0].0;
    let distinguishable = runs
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(b, (obs, _))| {
            let diff = compare(first, obs);
            if diff.equal {
                return None;
            }
            let site_pc = divergence_site(&diff, first);
            let source_line = site_pc.and_then(|pc| program.instructions.get(pc)).map(|i| i.source_line);
            Some(LeakPair { a: 0, b, diff, site_pc, source_line })
        })
        .collect();

    Ok(ScanReport {
        mode,
        assignments,
        traps: runs.iter().map(|r| r.1).collect(),
        cycles: runs.iter().map(|r| r.0.total_cycles).collect(),
        distinguishable,
    })
}
