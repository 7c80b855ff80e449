//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sempe::bench::{self, BenchMode, BenchSpec, Workload};
use sempe::isa::{self, assemble, Inputs, Instruction, Opcode, Program};
use sempe::machine::{self, Machine, MachineConfig, Outcome, TrapKind};
use sempe::seclang::interp::{interpret, DEFAULT_FUEL};
use sempe::seclang::{self, cte::transform_cte, NESTED_IF};
use sempe::trace::{EventKind, NullSink, ObservationEvent};
use sempe::Mode;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid() -> Vec<BenchSpec> {
    bench::default_grid(1)
}

fn indistinguishability(config: &MachineConfig) -> Verdict {
    let start = Instant::now();
    let mut traces = 0;
    for spec in grid() {
        let report = bench::scan(&spec, BenchMode::Sempe, 8, config).map_err(|e| e.to_string())?;
        ensure(report.assignments.len() == 8, || format!("{} W={}: {} vectors", spec.workload, spec.width, report.assignments.len()))?;
        ensure(report.traps.iter().all(Option::is_none), || format!("{} W={}: trap", spec.workload, spec.width))?;
        if let Some(p) = report.distinguishable.first() {
            return Err(format!("{} W={}: vectors {} and {} differ: {}", spec.workload, spec.width, p.a, p.b, p.diff.render_text().trim()));
        }
        traces += report.assignments.len();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{traces} traces bit-identical per spec in {:.1}s", elapsed.as_secs_f64()))
}

fn leak_demonstration(config: &MachineConfig) -> Verdict {
    let mut found: BTreeMap<Workload, usize> = BTreeMap::new();
    for spec in grid() {
        let report = bench::scan(&spec, BenchMode::Legacy, 8, config).map_err(|e| e.to_string())?;
        *found.entry(spec.workload).or_default() += report.distinguishable.len();
    }
    for w in Workload::ALL {
        ensure(found.get(&w).copied().unwrap_or(0) >= 1, || format!("{w}: no distinguishable pair"))?;
    }
    let summary: Vec<String> = found.iter().map(|(w, n)| format!("{w}={n}")).collect();
    Ok(format!("distinguishable pairs: {}", summary.join(" ")))
}

fn suite(config: &MachineConfig) -> Result<(Vec<bench::BenchResult>, Duration), String> {
    let start = Instant::now();
    let results = bench::run_suite(&grid(), &BenchMode::ALL, config).map_err(|e| e.to_string())?;
    Ok((results, start.elapsed()))
}

fn scaling(results: &[bench::BenchResult], elapsed: Duration) -> Verdict {
    let mut w10 = Vec::new();
    for r in results.iter().filter(|r| r.mode == BenchMode::Sempe) {
        let name = format!("{} W={}", r.spec.workload, r.spec.width);
        let ratio = r.overhead_ratio.ok_or_else(|| format!("{name}: {}", r.status))?;
        let vs_ideal = r.ratio_vs_ideal.expect("set with the ratio");
        ensure((0.8..=1.3).contains(&vs_ideal), || format!("{name}: ratio vs ideal {vs_ideal:.3}"))?;
        if r.spec.width == 10 {
            ensure((8.0..=11.5).contains(&ratio), || format!("{name}: overhead {ratio:.3}"))?;
            w10.push(ratio);
        }
    }
    ensure(w10.len() == Workload::ALL.len(), || format!("{} W=10 cells", w10.len()))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    let lo = w10.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = w10.iter().cloned().fold(0.0, f64::max);
    Ok(format!("W=10 overhead {lo:.2}..{hi:.2}, all ratio-vs-ideal in [0.8, 1.3], {:.1}s", elapsed.as_secs_f64()))
}

fn cte_comparison(results: &[bench::BenchResult]) -> Verdict {
    let mut expressible = 0;
    let mut rejected = Vec::new();
    for w in Workload::ALL {
        let rows = |mode| {
            let mut v: Vec<&bench::BenchResult> = results.iter().filter(|r| r.spec.workload == w && r.mode == mode).collect();
            v.sort_by_key(|r| r.spec.width);
            v
        };
        let cte = rows(BenchMode::Cte);
        if cte.iter().any(|r| matches!(r.status, bench::Status::Rejected(_))) {
            rejected.push(w.to_string());
            continue;
        }
        expressible += 1;
        let sempe = rows(BenchMode::Sempe);
        let mut prev = 0.0;
        for (c, s) in cte.iter().zip(&sempe) {
            let c_ratio = c.overhead_ratio.ok_or_else(|| format!("{w} W={}: cte {}", c.spec.width, c.status))?;
            let s_ratio = s.overhead_ratio.ok_or_else(|| format!("{w} W={}: sempe {}", s.spec.width, s.status))?;
            ensure(c_ratio > s_ratio, || format!("{w} W={}: cte {c_ratio:.2} <= sempe {s_ratio:.2}", c.spec.width))?;
            ensure(c_ratio > prev, || format!("{w} W={}: cte {c_ratio:.2} not above {prev:.2}", c.spec.width))?;
            prev = c_ratio;
        }
    }
    ensure(expressible > 0, || "no expressible workload".into())?;
    Ok(format!("{expressible} expressible workload(s); rejected by CTE: {}", if rejected.is_empty() { "none".into() } else { rejected.join(",") }))
}

fn cte_oracle() -> Verdict {
    let ast = seclang::parse(NESTED_IF).map_err(|e| e.to_string())?;
    let cte = transform_cte(&ast).map_err(|e| e.to_string())?;
    let original_ops = ast.arith_op_count();
    let ops = cte.arith_op_count();
    ensure(original_ops == 3, || format!("original has {original_ops} operations"))?;
    ensure((24..=32).contains(&ops), || format!("transformed has {ops} operations"))?;
    ensure(ops >= 8 * original_ops, || format!("{ops} < 8 x {original_ops}"))?;
    for bits in 0..8i64 {
        let mut inputs: Inputs = ["A", "B", "C"].iter().enumerate().map(|(i, n)| (n.to_string(), vec![(bits >> i) & 1])).collect();
        inputs.insert("j".into(), vec![10]);
        inputs.insert("k".into(), vec![20]);
        let want = interpret(&ast, &inputs, DEFAULT_FUEL).map_err(|e| e.to_string())?;
        let got = interpret(&cte, &inputs, DEFAULT_FUEL).map_err(|e| e.to_string())?;
        ensure(want == got, || format!("assignment {bits:03b}: {want:?} vs {got:?}"))?;
    }
    Ok(format!("8/8 assignments equivalent, {original_ops} -> {ops} operations"))
}

fn backward_compatibility(config: &MachineConfig) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbac0);
    let mut draws = 0;
    for w in Workload::ALL {
        let mut programs = BTreeMap::new();
        for width in bench::DEFAULT_WIDTHS {
            let spec = BenchSpec::new(w, width, 1);
            let base = bench::build(&spec, BenchMode::Baseline, config).map_err(|e| e.to_string())?;
            let legacy = bench::build(&spec, BenchMode::Legacy, config).map_err(|e| e.to_string())?;
            ensure(legacy.program.secure_branch_count() == 0 && legacy.program.eosjmp_count() == 0, || {
                format!("{w} W={width}: legacy decode kept secure instructions")
            })?;
            programs.insert(width, (spec, base, legacy));
        }
        for i in 0..100 {
            let width = bench::DEFAULT_WIDTHS[i % bench::DEFAULT_WIDTHS.len()];
            let (spec, base, legacy) = &programs[&width];
            let secrets: Vec<i64> = (0..width).map(|_| rng.gen_range(0..2)).collect();
            let mut inputs = spec.inputs(&secrets);
            inputs.insert("pin".into(), vec![rng.gen_range(1..1000)]);
            let mut outputs = Vec::new();
            for c in [base, legacy] {
                let mem = c.layout.initial_memory(&inputs).map_err(|e| e.to_string())?;
                let r = machine::run(&c.program, &mem, &[], Mode::Legacy, config, NullSink).map_err(|e| e.to_string())?;
                ensure(r.trap.is_none(), || format!("{w} W={width} draw {i}: {:?}", r.trap))?;
                outputs.push(c.layout.read_globals(&r.final_mem));
            }
            ensure(outputs[0] == outputs[1], || format!("{w} W={width} draw {i}: {:?} vs {:?}", outputs[0], outputs[1]))?;
            draws += 1;
        }
    }
    Ok(format!("{draws} draws, final memory identical to baseline"))
}

/// Nested secure regions with the inner one in a random arm. Returns the
/// assembly text and the lexical nesting level of each instruction.
fn nested_regions(depth: usize, rng: &mut ChaCha8Rng) -> (String, Vec<usize>, Vec<bool>) {
    fn region(k: usize, depth: usize, rng: &mut ChaCha8Rng, out: &mut Vec<(String, Option<usize>)>, conds: &mut Vec<bool>) {
        let c = rng.gen_bool(0.5);
        conds.push(c);
        let inner_in_nt = rng.gen_bool(0.5);
        out.push((format!("ldi r2, {}", c as i64), Some(k - 1)));
        out.push((format!("s.bz r2, T{k}"), Some(k - 1)));
        out.push(("add r3, r3, r1".into(), Some(k)));
        if k < depth && inner_in_nt {
            region(k + 1, depth, rng, out, conds);
        }
        out.push((format!("jmp J{k}"), Some(k)));
        out.push((format!("T{k}:"), None));
        out.push(("add r4, r4, r1".into(), Some(k)));
        if k < depth && !inner_in_nt {
            region(k + 1, depth, rng, out, conds);
        }
        out.push((format!("J{k}:"), None));
        out.push(("eosjmp".into(), Some(k)));
    }
    let mut lines = vec![("ldi r1, 1".to_string(), Some(0))];
    let mut conds = Vec::new();
    region(1, depth, rng, &mut lines, &mut conds);
    lines.push(("halt".into(), Some(0)));
    let mut text = String::new();
    let mut levels = Vec::new();
    for (l, level) in lines {
        let _ = writeln!(text, "{l}");
        levels.extend(level);
    }
    (text, levels, conds)
}

fn jbtable_properties(config: &MachineConfig) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ab1e);
    let mut steps = 0u64;
    for depth in 1..=config.jb_capacity {
        for _ in 0..4 {
            let (text, levels, _) = nested_regions(depth, &mut rng);
            let program = assemble(&text).map_err(|e| e.to_string())?;
            let mut m = Machine::new(&program, &[], &[], Mode::Sempe, config, NullSink).map_err(|e| e.to_string())?;
            // independent model: (taken target, outcome, T path running)
            let mut model: Vec<(usize, Outcome, bool)> = Vec::new();
            while !m.state.halted {
                let pc = m.state.pc;
                ensure(m.state.jbtable.depth() == levels[pc], || {
                    format!("depth {depth}: pc {pc} at table depth {} but nesting {}", m.state.jbtable.depth(), levels[pc])
                })?;
                let ins = program.instructions[pc].clone();
                if ins.secure_prefix {
                    let taken = (m.state.regs[ins.src1.unwrap() as usize] == 0) == (ins.opcode == Opcode::Bz);
                    model.push((ins.target().unwrap(), if taken { Outcome::Taken } else { Outcome::NotTaken }, false));
                } else if ins.opcode == Opcode::Eosjmp {
                    let top = model.last_mut().ok_or("model stack empty at eosjmp")?;
                    if top.2 {
                        model.pop();
                    } else {
                        top.2 = true;
                    }
                }
                m.step().map_err(|t| format!("depth {depth}: {t}"))?;
                steps += 1;
                let entries: Vec<(usize, Outcome, bool)> =
                    m.state.jbtable.entries().iter().map(|e| (e.next_pc, e.outcome, e.jb)).collect();
                ensure(entries == model, || format!("depth {depth} after pc {pc}: table {entries:?} vs model {model:?}"))?;
            }
            ensure(m.stats.max_depth == depth, || format!("max depth {} for nesting {depth}", m.stats.max_depth))?;
        }
    }
    let over = config.jb_capacity + 1;
    let (text, _, _) = nested_regions(over, &mut rng);
    let program = assemble(&text).map_err(|e| e.to_string())?;
    let r = machine::run(&program, &[], &[], Mode::Sempe, config, NullSink).map_err(|e| e.to_string())?;
    let last_sjmp = program.instructions.iter().enumerate().filter(|(_, i)| i.secure_prefix).map(|(pc, _)| pc).nth(over - 1);
    ensure(r.trap.map(|t| (t.kind, Some(t.pc))) == Some((TrapKind::JbtableOverflow, last_sjmp)), || {
        format!("depth {over}: {:?}", r.trap)
    })?;
    Ok(format!("depth 1..{} LIFO over {steps} steps; depth {over} traps jbtable_overflow", config.jb_capacity))
}

/// A secure region whose arms write random registers, optionally with a
/// nested region in one arm. `r1` holds the outer condition.
fn random_region(rng: &mut ChaCha8Rng, registers: usize) -> String {
    let mut text = String::new();
    for r in 2..registers {
        let _ = writeln!(text, "ldi r{r}, {}", rng.gen_range(-1000..1000));
    }
    let arm = |text: &mut String, rng: &mut ChaCha8Rng| {
        for _ in 0..rng.gen_range(0..6) {
            let op = ["add", "sub", "mul", "xor"][rng.gen_range(0..4)];
            let d = rng.gen_range(3..registers);
            let a = rng.gen_range(2..registers);
            let b = rng.gen_range(2..registers);
            let _ = writeln!(text, "{op} r{d}, r{a}, r{b}");
        }
    };
    let nested = rng.gen_range(0..3);
    text.push_str("s.bz r1, T\n");
    arm(&mut text, rng);
    if nested == 1 {
        text.push_str("s.bnz r2, IT\n");
        arm(&mut text, rng);
        text.push_str("jmp IJ\nIT:\n");
        arm(&mut text, rng);
        text.push_str("IJ:\neosjmp\n");
    }
    text.push_str("jmp J\nT:\n");
    arm(&mut text, rng);
    if nested == 2 {
        text.push_str("s.bz r2, IT\n");
        arm(&mut text, rng);
        text.push_str("jmp IJ\nIT:\n");
        arm(&mut text, rng);
        text.push_str("IJ:\neosjmp\n");
    }
    text.push_str("J:\neosjmp\nhalt\n");
    text
}

/// SPM read addresses and cycle cost of one closing eosjmp.
type Restore = (Vec<u64>, u64);

/// Every closing eosjmp in order, and the final registers.
fn closing_restores(program: &Program, cond: u64, config: &MachineConfig) -> Result<(Vec<Restore>, Vec<u64>), String> {
    let mut m = Machine::new(program, &[], &[0, cond], Mode::Sempe, config, Vec::<ObservationEvent>::new()).map_err(|e| e.to_string())?;
    let mut restores = Vec::new();
    while !m.state.halted {
        let closing = program.instructions[m.state.pc].opcode == Opcode::Eosjmp && m.state.jbtable.top().is_some_and(|e| e.jb);
        let (before_events, before_cycle) = (m.sink().len(), m.state.cycle);
        m.step().map_err(|t| t.to_string())?;
        if closing {
            let reads =
                m.sink()[before_events..].iter().filter(|e| e.kind == EventKind::SpmRead).filter_map(|e| e.addr).collect();
            restores.push((reads, m.state.cycle - before_cycle));
        }
    }
    Ok((restores, m.state.regs.clone()))
}

fn restore_obliviousness(config: &MachineConfig) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e5e);
    let registers = isa::DEFAULT_REGISTERS;
    for case in 0..500 {
        let text = random_region(&mut rng, registers);
        let program = assemble(&text).map_err(|e| e.to_string())?;
        let (nt, regs_nt) = closing_restores(&program, 1, config)?;
        let (t, regs_t) = closing_restores(&program, 0, config)?;
        ensure(!nt.is_empty(), || format!("case {case}: no closing eosjmp"))?;
        ensure(nt == t, || format!("case {case}: restores differ\n{nt:?}\n{t:?}\n{text}"))?;
        for (cond, regs) in [(1u64, &regs_nt), (0, &regs_t)] {
            let legacy = machine::run(&program, &[], &[0, cond], Mode::Legacy, config, NullSink).map_err(|e| e.to_string())?;
            ensure(&legacy.final_regs == regs, || format!("case {case} cond {cond}: registers differ from legacy\n{text}"))?;
        }
    }
    Ok("500 random regions: identical SPM reads and restore cost for both outcomes".into())
}

fn random_program(rng: &mut ChaCha8Rng) -> Program {
    let len = rng.gen_range(1..40);
    let registers = isa::DEFAULT_REGISTERS as u8;
    let instructions = (0..len)
        .map(|_| {
            let op = Opcode::ALL[rng.gen_range(0..Opcode::ALL.len())];
            let layout = op.layout();
            let mut reg = || Some(rng.gen_range(0..registers));
            let (dst, src1, src2) = (
                if layout.dst { reg() } else { None },
                if layout.src1 { reg() } else { None },
                if layout.src2 { reg() } else { None },
            );
            let imm = layout.imm.then(|| {
                if op.has_target() {
                    rng.gen_range(0..len) as i64
                } else if matches!(op, Opcode::Shl | Opcode::Shr) {
                    rng.gen_range(0..64)
                } else if op == Opcode::Divc {
                    rng.gen_range(1..1000)
                } else {
                    rng.gen()
                }
            });
            Instruction {
                opcode: op,
                dst,
                src1,
                src2,
                imm,
                secure_prefix: op.is_conditional_branch() && rng.gen_bool(0.5),
                source_line: rng.gen_range(0..100),
            }
        })
        .collect();
    Program::new(instructions)
}

fn encoding_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe2c0);
    let mut secure = 0;
    for case in 0..1000 {
        let p = random_program(&mut rng);
        let image = isa::encode(&p).map_err(|e| format!("case {case}: {e}"))?;
        let stripped = p.without_debug_info();
        let sempe = isa::decode(&image.bytes, Mode::Sempe).map_err(|e| format!("case {case}: {e}"))?;
        ensure(sempe == stripped, || format!("case {case}: sempe decode differs"))?;
        let legacy = isa::decode(&image.bytes, Mode::Legacy).map_err(|e| format!("case {case}: {e}"))?;
        ensure(legacy == stripped.legacy_view(), || format!("case {case}: legacy decode differs"))?;
        ensure(legacy.secure_branch_count() == 0 && legacy.eosjmp_count() == 0, || format!("case {case}: not erased"))?;
        let reencoded = isa::encode(&sempe).map_err(|e| e.to_string())?;
        ensure(reencoded.bytes == image.bytes, || format!("case {case}: re-encoding differs"))?;
        secure += p.secure_branch_count() + p.eosjmp_count();
    }
    Ok(format!("1000 programs round-trip; {secure} secure instructions erased by the legacy decoder"))
}

fn main() {
    let config = MachineConfig::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| match v {
        Ok(detail) => println!("PASS {n} {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL {n} {name}: {detail}");
        }
    };
    report(1, "indistinguishability", indistinguishability(&config));
    report(2, "leak_demonstration", leak_demonstration(&config));
    match suite(&config) {
        Ok((results, elapsed)) => {
            report(3, "scaling", scaling(&results, elapsed));
            report(4, "cte_comparison", cte_comparison(&results));
        }
        Err(e) => {
            report(3, "scaling", Err(e.clone()));
            report(4, "cte_comparison", Err(e));
        }
    }
    report(5, "cte_oracle", cte_oracle());
    report(6, "backward_compatibility", backward_compatibility(&config));
    report(7, "jbtable_properties", jbtable_properties(&config));
    report(8, "restore_obliviousness", restore_obliviousness(&config));
    report(9, "encoding_round_trip", encoding_round_trip());
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
