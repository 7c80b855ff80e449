//! In-order functional and timing simulator.
//!
//! In SeMPE mode a secure branch runs the not-taken path, jumps back to the
//! taken target at the first `eosjmp`, runs the taken path, and at the
//! second `eosjmp` restores the registers the true outcome would have left.
//! Legacy mode treats secure branches as plain branches and `eosjmp` as NOP.

mod cache;
mod config;
mod jbtable;
mod spm;

pub use cache::Cache;
pub use config::{CacheConfig, ConfigError, MachineConfig, TimingModel, DEFAULT_JB_CAPACITY};
pub use jbtable::{JbEntry, JbTable, Outcome, Overflow};
pub use spm::{RegSet, Snapshot, Spm};

use std::fmt;

use thiserror::Error;

use crate::isa::{validate, Diagnostic, DiagnosticKind, Instruction, Opcode, Program};
use crate::trace::{EventKind, ObservationEvent, TraceSink};
use crate::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrapKind {
    JbtableOverflow,
    UnmatchedEosjmp,
    StepLimitExceeded,
    MemoryOutOfBounds,
    PcOutOfRange,
    /// HALT reached inside a secure region.
    UnclosedSecureRegion,
    CallStackOverflow,
    ReturnStackUnderflow,
}

impl TrapKind {
    pub const ALL: [TrapKind; 8] = [
        TrapKind::JbtableOverflow,
        TrapKind::UnmatchedEosjmp,
        TrapKind::StepLimitExceeded,
        TrapKind::MemoryOutOfBounds,
        TrapKind::PcOutOfRange,
        TrapKind::UnclosedSecureRegion,
        TrapKind::CallStackOverflow,
        TrapKind::ReturnStackUnderflow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrapKind::JbtableOverflow => "jbtable_overflow",
            TrapKind::UnmatchedEosjmp => "unmatched_eosjmp",
            TrapKind::StepLimitExceeded => "step_limit_exceeded",
            TrapKind::MemoryOutOfBounds => "memory_out_of_bounds",
            TrapKind::PcOutOfRange => "pc_out_of_range",
            TrapKind::UnclosedSecureRegion => "unclosed_secure_region",
            TrapKind::CallStackOverflow => "call_stack_overflow",
            TrapKind::ReturnStackUnderflow => "return_stack_underflow",
        }
    }

    pub fn from_name(s: &str) -> Option<TrapKind> {
        TrapKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trap {
    pub kind: TrapKind,
    pub pc: usize,
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at pc {}", self.kind, self.pc)
    }
}

/// Reasons a run cannot start.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("invalid program: {}", .0.first().map(|d| d.to_string()).unwrap_or_default())]
    InvalidProgram(Vec<Diagnostic>),
    #[error("{given} initial register values for {registers} registers")]
    TooManyRegisters { given: usize, registers: usize },
    #[error("initial memory has {given} words but memory size is {words}")]
    MemoryTooSmall { given: usize, words: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub drains: u64,
    pub secure_regions: u64,
    pub max_depth: usize,
    pub spm_bytes_written: u64,
    pub spm_bytes_read: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub final_regs: Vec<u64>,
    pub final_mem: Vec<u64>,
    pub cycles: u64,
    pub committed_instructions: u64,
    pub trap: Option<Trap>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub pc: usize,
    pub regs: Vec<u64>,
    pub mem: Vec<u64>,
    pub jbtable: JbTable,
    pub spm: Spm,
    pub cycle: u64,
    pub halted: bool,
    pub mode: Mode,
    pub committed: u64,
    pub call_stack: Vec<usize>,
}

pub struct Machine<'p, S: TraceSink> {
    program: &'p Program,
    timing: TimingModel,
    step_limit: u64,
    call_depth: usize,
    pub state: MachineState,
    pub stats: RunStats,
    cache: Option<Cache>,
    sink: S,
}

fn is_hard_error(kind: DiagnosticKind) -> bool {
    !matches!(kind, DiagnosticKind::NoHalt | DiagnosticKind::FallsOffEnd)
}

impl<'p, S: TraceSink> Machine<'p, S> {
    pub fn new(
        program: &'p Program,
        init_mem: &[u64],
        init_regs: &[u64],
        mode: Mode,
        config: &MachineConfig,
        sink: S,
    ) -> Result<Self, MachineError> {
        let registers = config.registers.unwrap_or(program.register_count);
        let diagnostics: Vec<Diagnostic> = if registers == program.register_count {
            validate(program)
        } else {
            let mut p = program.clone();
            p.register_count = registers;
            validate(&p)
        }
        .into_iter()
        .filter(|d| is_hard_error(d.kind))
        .collect();
        if !diagnostics.is_empty() {
            return Err(MachineError::InvalidProgram(diagnostics));
        }
        if init_regs.len() > registers {
            return Err(MachineError::TooManyRegisters { given: init_regs.len(), registers });
        }
        let words = if config.mem_words == 0 {
            program.data_size.max(init_mem.len())
        } else {
            config.mem_words
        };
        if init_mem.len() > words {
            return Err(MachineError::MemoryTooSmall { given: init_mem.len(), words });
        }
        let mut mem = init_mem.to_vec();
        mem.resize(words, 0);
        let mut regs = init_regs.to_vec();
        regs.resize(registers, 0);
        let (jb_capacity, spm_levels) = match mode {
            Mode::Sempe => (config.jb_capacity, config.jb_capacity),
            Mode::Legacy => (0, 0),
        };
        Ok(Self {
            program,
            timing: config.timing,
            step_limit: config.step_limit,
            call_depth: config.call_depth,
            state: MachineState {
                pc: program.entry,
                regs,
                mem,
                jbtable: JbTable::new(jb_capacity),
                spm: Spm::new(registers, spm_levels),
                cycle: 0,
                halted: false,
                mode,
                committed: 0,
                call_stack: Vec::new(),
            },
            stats: RunStats::default(),
            cache: config.timing.cache.map(Cache::new),
            sink,
        })
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    fn emit(&mut self, kind: EventKind, addr: Option<u64>) {
        let event = ObservationEvent { kind, pc: self.state.pc, addr, cycle: self.state.cycle };
        self.sink.record(event);
    }

    fn commit(&mut self) {
        self.state.cycle += self.timing.base_cpi;
        self.state.committed += 1;
        self.emit(EventKind::CommitPc, None);
    }

    fn drain(&mut self) {
        self.emit(EventKind::Drain, None);
        self.state.cycle += self.timing.drain_penalty;
        self.stats.drains += 1;
    }

    fn charge_spm(&mut self, bytes: usize, write: bool) {
        self.state.cycle += self.timing.spm_transfer(bytes);
        if write {
            self.stats.spm_bytes_written += bytes as u64;
        } else {
            self.stats.spm_bytes_read += bytes as u64;
        }
    }

    fn trap(&mut self, kind: TrapKind) -> Trap {
        self.emit(EventKind::Trap(kind), None);
        Trap { kind, pc: self.state.pc }
    }

    fn reg(&self, r: Option<u8>) -> u64 {
        self.state.regs[usize::from(r.expect("operand layout checked"))]
    }

    /// Register write from an executing instruction. Inside a secure region
    /// it marks the current path's modified bit-vector.
    fn write_reg(&mut self, r: u8, value: u64) {
        let r = usize::from(r);
        self.state.regs[r] = value;
        if self.state.mode == Mode::Sempe {
            if let Some(top) = self.state.jbtable.top() {
                let slot = &mut self.state.spm.slots[self.state.jbtable.depth() - 1];
                if top.jb {
                    slot.modified_t.insert(r);
                } else {
                    slot.modified_nt.insert(r);
                }
            }
        }
    }

    fn mem_addr(&self, ins: &Instruction) -> Option<usize> {
        let base = self.reg(ins.src1) as i64;
        let addr = base.wrapping_add(ins.imm.unwrap_or(0));
        usize::try_from(addr).ok().filter(|&a| a < self.state.mem.len())
    }

    fn mem_cost(&mut self, addr: usize) {
        if let (Some(cache), Some(cfg)) = (self.cache.as_mut(), self.timing.cache) {
            let hit = cache.access(addr as u64);
            let extra = cfg.hit_cycles.saturating_sub(self.timing.base_cpi);
            self.state.cycle += extra + if hit { 0 } else { cfg.miss_penalty };
        }
    }

    /// Executes one instruction. `Ok` after HALT as well; check
    /// `state.halted`.
    pub fn step(&mut self) -> Result<(), Trap> {
        if self.state.halted {
            return Ok(());
        }
        if self.state.committed >= self.step_limit {
            return Err(self.trap(TrapKind::StepLimitExceeded));
        }
        let Some(ins) = self.program.instructions.get(self.state.pc) else {
            return Err(self.trap(TrapKind::PcOutOfRange));
        };
        let ins = ins.clone();
        let sempe = self.state.mode == Mode::Sempe;
        let next = self.state.pc + 1;
        match ins.opcode {
            Opcode::Bz | Opcode::Bnz if sempe && ins.secure_prefix => return self.step_sjmp(&ins),
            Opcode::Eosjmp if sempe => return self.step_eosjmp(&ins),
            Opcode::Cmov => {
                self.step_cmov(&ins);
                return Ok(());
            }
            _ => {}
        }
        match ins.opcode {
            Opcode::Ld => {
                let addr = self.mem_addr(&ins).ok_or_else(|| self.trap(TrapKind::MemoryOutOfBounds))?;
                self.commit();
                self.emit(EventKind::MemRead, Some(addr as u64));
                self.mem_cost(addr);
                let v = self.state.mem[addr];
                self.write_reg(ins.dst.unwrap(), v);
                self.state.pc = next;
            }
            Opcode::St => {
                let addr = self.mem_addr(&ins).ok_or_else(|| self.trap(TrapKind::MemoryOutOfBounds))?;
                self.commit();
                self.emit(EventKind::MemWrite, Some(addr as u64));
                self.mem_cost(addr);
                self.state.mem[addr] = self.reg(ins.src2);
                self.state.pc = next;
            }
            Opcode::Jmp => {
                self.commit();
                self.state.pc = ins.target().unwrap();
            }
            Opcode::Bz | Opcode::Bnz => {
                self.commit();
                let zero = self.reg(ins.src1) == 0;
                let taken = zero == (ins.opcode == Opcode::Bz);
                self.state.pc = if taken { ins.target().unwrap() } else { next };
            }
            Opcode::Call => {
                if self.state.call_stack.len() >= self.call_depth {
                    return Err(self.trap(TrapKind::CallStackOverflow));
                }
                self.commit();
                self.state.call_stack.push(next);
                self.state.pc = ins.target().unwrap();
            }
            Opcode::Ret => {
                let Some(&ret) = self.state.call_stack.last() else {
                    return Err(self.trap(TrapKind::ReturnStackUnderflow));
                };
                self.commit();
                self.state.call_stack.pop();
                self.state.pc = ret;
            }
            Opcode::Halt => {
                if !self.state.jbtable.is_empty() {
                    return Err(self.trap(TrapKind::UnclosedSecureRegion));
                }
                self.commit();
                self.state.halted = true;
            }
            Opcode::Nop | Opcode::Eosjmp => {
                self.commit();
                self.state.pc = next;
            }
            op => {
                self.commit();
                let a = ins.src1.map_or(0, |r| self.state.regs[usize::from(r)]);
                let v = match op {
                    Opcode::Ldi => ins.imm.unwrap() as u64,
                    Opcode::Mov => a,
                    Opcode::Add => a.wrapping_add(self.reg(ins.src2)),
                    Opcode::Sub => a.wrapping_sub(self.reg(ins.src2)),
                    Opcode::Mul => a.wrapping_mul(self.reg(ins.src2)),
                    Opcode::Divc => (a as i64).wrapping_div(ins.imm.unwrap()) as u64,
                    Opcode::And => a & self.reg(ins.src2),
                    Opcode::Or => a | self.reg(ins.src2),
                    Opcode::Xor => a ^ self.reg(ins.src2),
                    Opcode::Shl => a << (ins.imm.unwrap() & 63),
                    Opcode::Shr => a >> (ins.imm.unwrap() & 63),
                    Opcode::Slt => u64::from((a as i64) < (self.reg(ins.src2) as i64)),
                    _ => unreachable!("handled above"),
                };
                self.write_reg(ins.dst.unwrap(), v);
                self.state.pc = next;
            }
        }
        Ok(())
    }

    /// Secure branch commit: push a jbTable entry recording the true
    /// outcome and taken target, continue on the fall-through (NT) path,
    /// drain, and save the full register file into the snapshot slot for
    /// this nesting level.
    pub fn step_sjmp(&mut self, ins: &Instruction) -> Result<(), Trap> {
        debug_assert!(ins.opcode.is_conditional_branch() && ins.secure_prefix);
        let zero = self.reg(ins.src1) == 0;
        let taken = zero == (ins.opcode == Opcode::Bz);
        let outcome = if taken { Outcome::Taken } else { Outcome::NotTaken };
        if self.state.jbtable.push(outcome).is_err() {
            return Err(self.trap(TrapKind::JbtableOverflow));
        }
        self.commit();
        self.state.jbtable.write_target(ins.target().expect("branch has a target"));
        let depth = self.state.jbtable.depth();
        self.stats.max_depth = self.stats.max_depth.max(depth);
        self.stats.secure_regions += 1;
        self.drain();

        let slot = depth - 1;
        let registers = self.state.spm.registers();
        for r in 0..registers {
            let addr = self.state.spm.pre_addr(slot, r);
            self.emit(EventKind::SpmWrite, Some(addr));
        }
        let snap = &mut self.state.spm.slots[slot];
        snap.regs_pre.copy_from_slice(&self.state.regs);
        snap.modified_nt = RegSet::empty();
        snap.modified_t = RegSet::empty();
        self.charge_spm(8 * registers, true);
        self.state.pc += 1;
        Ok(())
    }

    /// First hit: save the NT-path values of modified registers, put those
    /// registers back to their pre-region values, and jump to the taken
    /// target. Second hit: restore and pop.
    pub fn step_eosjmp(&mut self, ins: &Instruction) -> Result<(), Trap> {
        debug_assert_eq!(ins.opcode, Opcode::Eosjmp);
        let Some(&top) = self.state.jbtable.top() else {
            return Err(self.trap(TrapKind::UnmatchedEosjmp));
        };
        self.commit();
        let slot = self.state.jbtable.depth() - 1;
        if !top.jb {
            let modified = self.state.spm.slots[slot].modified_nt;
            for r in modified.iter() {
                let addr = self.state.spm.nt_addr(slot, r);
                self.emit(EventKind::SpmWrite, Some(addr));
                self.state.spm.slots[slot].regs_nt[r] = self.state.regs[r];
            }
            let bv_addr = self.state.spm.bitvector_addr(slot, false);
            self.emit(EventKind::SpmWrite, Some(bv_addr));
            let bv_bytes = self.state.spm.bitvector_bytes();
            self.charge_spm(8 * modified.len() + bv_bytes, true);

            for r in modified.iter() {
                let addr = self.state.spm.pre_addr(slot, r);
                self.emit(EventKind::SpmRead, Some(addr));
                self.state.regs[r] = self.state.spm.slots[slot].regs_pre[r];
            }
            self.charge_spm(8 * modified.len(), false);

            let entry = self.state.jbtable.top_mut().expect("checked above");
            entry.jb = true;
            self.drain();
            self.state.pc = top.next_pc;
        } else {
            let snapshot = self.state.spm.slots[slot].clone();
            self.restore_registers(&top, &snapshot, slot);
            self.state.jbtable.pop();
            let merged = snapshot.modified_nt.union(&snapshot.modified_t);
            if let Some(parent) = self.state.jbtable.top() {
                let parent_slot = &mut self.state.spm.slots[slot - 1];
                if parent.jb {
                    parent_slot.modified_t.union_with(&merged);
                } else {
                    parent_slot.modified_nt.union_with(&merged);
                }
            }
            self.drain();
            self.state.pc += 1;
        }
        Ok(())
    }

    /// Reads a candidate for every register modified on either path and
    /// writes it (NT outcome) or writes the register back to itself (T
    /// outcome). The reads and the cost do not depend on the outcome.
    pub fn restore_registers(&mut self, entry: &JbEntry, snapshot: &Snapshot, slot: usize) {
        let union = snapshot.modified_nt.union(&snapshot.modified_t);
        for r in union.iter() {
            let (addr, candidate) = if snapshot.modified_nt.contains(r) {
                (self.state.spm.nt_addr(slot, r), snapshot.regs_nt[r])
            } else {
                (self.state.spm.pre_addr(slot, r), snapshot.regs_pre[r])
            };
            self.emit(EventKind::SpmRead, Some(addr));
            let current = self.state.regs[r];
            self.state.regs[r] = match entry.outcome {
                Outcome::NotTaken => candidate,
                Outcome::Taken => current,
            };
        }
        self.charge_spm(8 * union.len(), false);
    }

    /// `dst := pred != 0 ? src : dst`, always writing `dst`.
    pub fn step_cmov(&mut self, ins: &Instruction) {
        self.commit();
        let pred = self.reg(ins.src1);
        let src = self.reg(ins.src2);
        let old = self.reg(ins.dst);
        let value = if pred != 0 { src } else { old };
        self.write_reg(ins.dst.unwrap(), value);
        self.state.pc += 1;
    }

    /// Runs to HALT or the first trap.
    pub fn run(&mut self) -> Option<Trap> {
        while !self.state.halted {
            if let Err(trap) = self.step() {
                return Some(trap);
            }
        }
        None
    }

    pub fn into_result(mut self, trap: Option<Trap>) -> ExecutionResult {
        if let Some(c) = &self.cache {
            self.stats.cache_hits = c.hits;
            self.stats.cache_misses = c.misses;
        }
        ExecutionResult {
            final_regs: self.state.regs,
            final_mem: self.state.mem,
            cycles: self.state.cycle,
            committed_instructions: self.state.committed,
            trap,
            stats: self.stats,
        }
    }
}

/// Executes `program` from its entry. Traps end the run and are reported in
/// [`ExecutionResult::trap`]; an `Err` means the run could not start.
pub fn run<S: TraceSink>(
    program: &Program,
    init_mem: &[u64],
    init_regs: &[u64],
    mode: Mode,
    config: &MachineConfig,
    sink: S,
) -> Result<ExecutionResult, MachineError> {
    let mut m = Machine::new(program, init_mem, init_regs, mode, config, sink)?;
    let trap = m.run();
    Ok(m.into_result(trap))
}

pub fn run_legacy<S: TraceSink>(
    program: &Program,
    init_mem: &[u64],
    init_regs: &[u64],
    config: &MachineConfig,
    sink: S,
) -> Result<ExecutionResult, MachineError> {
    run(program, init_mem, init_regs, Mode::Legacy, config, sink)
}
