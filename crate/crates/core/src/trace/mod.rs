//! Attacker-visible observations.
//!
//! An observation is the sequence of committed PCs, data-memory and
//! scratchpad addresses, pipeline drains and traps, each stamped with its
//! cycle. Register and memory *values* never appear. Two runs that differ
//! only in secret inputs are indistinguishable iff their observations are
//! identical.

mod scan;

pub use scan::{leakage_scan, scan_assignments, LeakPair, ScanError, ScanReport, SecretDomain, DEFAULT_SCAN_CAP};

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::isa::Program;
use crate::machine::{self, ExecutionResult, MachineConfig, MachineError, TrapKind};
use crate::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    CommitPc,
    MemRead,
    MemWrite,
    Drain,
    SpmRead,
    SpmWrite,
    Trap(TrapKind),
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::CommitPc => "commit_pc",
            EventKind::MemRead => "mem_read",
            EventKind::MemWrite => "mem_write",
            EventKind::Drain => "drain",
            EventKind::SpmRead => "spm_read",
            EventKind::SpmWrite => "spm_write",
            EventKind::Trap(_) => "trap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservationEvent {
    pub kind: EventKind,
    pub pc: usize,
    /// Word address for memory and scratchpad events.
    pub addr: Option<u64>,
    pub cycle: u64,
}

impl fmt::Display for ObservationEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.cycle, self.kind.name(), self.pc)?;
        if let Some(a) = self.addr {
            write!(f, " {a}")?;
        }
        if let EventKind::Trap(t) = self.kind {
            write!(f, " {}", t.name())?;
        }
        Ok(())
    }
}

/// Receives events as the machine produces them.
pub trait TraceSink {
    fn record(&mut self, event: ObservationEvent);
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    #[inline]
    fn record(&mut self, _event: ObservationEvent) {}
}

impl TraceSink for Vec<ObservationEvent> {
    fn record(&mut self, event: ObservationEvent) {
        self.push(event);
    }
}

impl<T: TraceSink + ?Sized> TraceSink for &mut T {
    fn record(&mut self, event: ObservationEvent) {
        (**self).record(event);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Observation {
    pub events: Vec<ObservationEvent>,
    pub total_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseObservationError {
    pub line: usize,
    pub message: String,
}

impl Observation {
    pub fn commit_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::CommitPc).count()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Line-oriented text: a `# total_cycles N` header, then one
    /// `cycle kind pc [addr]` line per event.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 16 + 32);
        let _ = writeln!(out, "# total_cycles {}", self.total_cycles);
        for e in &self.events {
            let _ = writeln!(out, "{e}");
        }
        out
    }
}

impl FromStr for Observation {
    type Err = ParseObservationError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut obs = Observation::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: &str| ParseObservationError { line, message: message.to_string() };
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            if let Some(comment) = raw.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                if parts.next() == Some("total_cycles") {
                    obs.total_cycles = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err("bad total_cycles header"))?;
                }
                continue;
            }
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(err("expected `cycle kind pc [addr]`"));
            }
            let cycle = fields[0].parse().map_err(|_| err("bad cycle"))?;
            let pc = fields[2].parse().map_err(|_| err("bad pc"))?;
            let (kind, addr) = match fields[1] {
                "trap" => {
                    let name = fields.get(3).ok_or_else(|| err("trap without kind"))?;
                    let t = TrapKind::from_name(name).ok_or_else(|| err("unknown trap kind"))?;
                    (EventKind::Trap(t), None)
                }
                "commit_pc" | "drain" => (
                    if fields[1] == "drain" { EventKind::Drain } else { EventKind::CommitPc },
                    None,
                ),
                k @ ("mem_read" | "mem_write" | "spm_read" | "spm_write") => {
                    let addr = fields
                        .get(3)
                        .and_then(|a| a.parse().ok())
                        .ok_or_else(|| err("missing address"))?;
                    let kind = match k {
                        "mem_read" => EventKind::MemRead,
                        "mem_write" => EventKind::MemWrite,
                        "spm_read" => EventKind::SpmRead,
                        _ => EventKind::SpmWrite,
                    };
                    (kind, Some(addr))
                }
                _ => return Err(err("unknown event kind")),
            };
            obs.events.push(ObservationEvent { kind, pc, addr, cycle });
        }
        Ok(obs)
    }
}

/// Runs `program` and returns its full observation. A trap is the final
/// event of the stream.
pub fn observe(
    program: &Program,
    init_mem: &[u64],
    init_regs: &[u64],
    mode: Mode,
    config: &MachineConfig,
) -> Result<(Observation, ExecutionResult), MachineError> {
    let mut events = Vec::new();
    let result = machine::run(program, init_mem, init_regs, mode, config, &mut events)?;
    let obs = Observation { events, total_cycles: result.cycles };
    Ok((obs, result))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub index: usize,
    pub event_a: Option<ObservationEvent>,
    pub event_b: Option<ObservationEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffReport {
    pub equal: bool,
    pub first_divergence: Option<Divergence>,
    pub events_a: usize,
    pub events_b: usize,
    pub cycles_a: u64,
    pub cycles_b: u64,
}

/// Exact elementwise comparison.
pub fn compare(a: &Observation, b: &Observation) -> DiffReport {
    let first = a
        .events
        .iter()
        .zip(&b.events)
        .position(|(x, y)| x != y)
        .or_else(|| (a.events.len() != b.events.len()).then(|| a.events.len().min(b.events.len())));
    let first_divergence = first.map(|index| Divergence {
        index,
        event_a: a.events.get(index).copied(),
        event_b: b.events.get(index).copied(),
    });
    DiffReport {
        equal: first_divergence.is_none() && a.total_cycles == b.total_cycles,
        first_divergence,
        events_a: a.events.len(),
        events_b: b.events.len(),
        cycles_a: a.total_cycles,
        cycles_b: b.total_cycles,
    }
}

impl DiffReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if self.equal {
            let _ = writeln!(out, "observations identical ({} events, {} cycles)", self.events_a, self.cycles_a);
            return out;
        }
        let _ = writeln!(out, "observations differ");
        match &self.first_divergence {
            Some(d) => {
                let show = |e: &Option<ObservationEvent>| e.map_or("<end>".to_string(), |e| e.to_string());
                let _ = writeln!(out, "  first divergence at event {}", d.index);
                let _ = writeln!(out, "    a: {}", show(&d.event_a));
                let _ = writeln!(out, "    b: {}", show(&d.event_b));
            }
            None => {
                let _ = writeln!(out, "  event streams equal; total cycles differ");
            }
        }
        let _ = writeln!(out, "  events: {} vs {}", self.events_a, self.events_b);
        let _ = writeln!(out, "  cycles: {} vs {}", self.cycles_a, self.cycles_b);
        out
    }

    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "equal={}", self.equal);
        let _ = writeln!(out, "events_a={}", self.events_a);
        let _ = writeln!(out, "events_b={}", self.events_b);
        let _ = writeln!(out, "cycles_a={}", self.cycles_a);
        let _ = writeln!(out, "cycles_b={}", self.cycles_b);
        if let Some(d) = &self.first_divergence {
            let _ = writeln!(out, "divergence_index={}", d.index);
            if let Some(e) = d.event_a {
                let _ = writeln!(out, "divergence_a={e}");
            }
            if let Some(e) = d.event_b {
                let _ = writeln!(out, "divergence_b={e}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    fn cfg() -> MachineConfig {
        MachineConfig::default()
    }

    #[test]
    fn straight_line_commits_every_instruction() {
        let p = assemble("ldi r1, 1\nadd r2, r1, r1\nnop\nhalt").unwrap();
        let (obs, res) = observe(&p, &[], &[], Mode::Sempe, &cfg()).unwrap();
        assert_eq!(obs.commit_count(), 4);
        assert_eq!(obs.events.len(), 4);
        assert_eq!(obs.total_cycles, 4);
        assert_eq!(res.committed_instructions, 4);
    }

    #[test]
    fn secure_region_drains_three_times_and_legacy_never() {
        let src = "ldi r1, 1\ns.bz r1, else\nldi r2, 5\njmp join\nelse: ldi r2, 7\njoin: eosjmp\nhalt";
        let p = assemble(src).unwrap();
        let (obs, _) = observe(&p, &[], &[], Mode::Sempe, &cfg()).unwrap();
        assert_eq!(obs.count(EventKind::Drain), 3);
        let (legacy, _) = observe(&p, &[], &[], Mode::Legacy, &cfg()).unwrap();
        assert_eq!(legacy.count(EventKind::Drain), 0);
    }

    #[test]
    fn compare_is_reflexive_and_localizes() {
        let p = assemble("ldi r1, 1\nhalt").unwrap();
        let (a, _) = observe(&p, &[], &[], Mode::Sempe, &cfg()).unwrap();
        let r = compare(&a, &a);
        assert!(r.equal);
        assert!(r.first_divergence.is_none());

        let q = assemble("nop\nldi r1, 1\nhalt").unwrap();
        let (b, _) = observe(&q, &[], &[], Mode::Sempe, &cfg()).unwrap();
        let r = compare(&a, &b);
        assert!(!r.equal);
        let d = r.first_divergence.clone().unwrap();
        // both start with commits at pcs 0 and 1; `a` then ends
        assert_eq!(d.index, 2);
        assert!(d.event_a.is_none());
        assert!(r.render_kv().contains("equal=false"));
    }

    #[test]
    fn cycle_only_difference_is_unequal() {
        let a = Observation { events: vec![], total_cycles: 3 };
        let b = Observation { events: vec![], total_cycles: 4 };
        let r = compare(&a, &b);
        assert!(!r.equal);
        assert!(r.first_divergence.is_none());
    }

    #[test]
    fn text_form_parses_back() {
        let src = "ldi r1, 0\ns.bnz r1, t\nst [r1+3], r1\njmp j\nt: ld r2, [r1+2]\nj: eosjmp\nhalt";
        let p = assemble(src).unwrap();
        let mut config = cfg();
        config.mem_words = 8;
        let (obs, _) = observe(&p, &[], &[], Mode::Sempe, &config).unwrap();
        let back: Observation = obs.to_text().parse().unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn trap_events_round_trip() {
        let p = assemble("eosjmp\nhalt").unwrap();
        let (obs, res) = observe(&p, &[], &[], Mode::Sempe, &cfg()).unwrap();
        assert_eq!(res.trap.unwrap().kind, TrapKind::UnmatchedEosjmp);
        let last = obs.events.last().unwrap();
        assert_eq!(last.kind, EventKind::Trap(TrapKind::UnmatchedEosjmp));
        let back: Observation = obs.to_text().parse().unwrap();
        assert_eq!(back, obs);
    }
}
