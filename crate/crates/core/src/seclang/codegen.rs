//! Instruction selection.
//!
//! Register conventions: `r0` holds 0 and `r1` holds 1 for the whole run,
//! `r2..r7` are expression temporaries, and `r8..` hold scalar locals in
//! declaration scope order. Globals, arrays and locals that do not fit live
//! in memory. With `secure` set, every secret `if` becomes a secure region:
//!
//! ```text
//!     <copy each shadowed variable into its NT and T copies>
//!     st   [pred], c
//!     s.bz c, ELSE
//!     <then arm, writing NT copies>
//!     jmp  JOIN
//! ELSE:
//!     <else arm, writing T copies>
//! JOIN:
//!     eosjmp
//!     <per word: ld T; ld pred; ld NT; cmov; st original>
//! ```

use std::collections::{BTreeMap, BTreeSet};

use super::ast::{Ast, BinOp, Expr, Stmt, StmtKind, UnOp, VarId};
use super::taint::TaintState;
use super::{CompileError, RejectKind};
use crate::isa::{DataLayout, DataSymbol, Instruction, Opcode, Program};

pub const R_ZERO: u8 = 0;
pub const R_ONE: u8 = 1;
const FIRST_TEMP: u8 = 2;
const FIRST_LOCAL: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodegenOptions {
    /// Lower secret branches to secure regions.
    pub secure: bool,
    pub register_count: usize,
    pub jb_capacity: usize,
    /// Keep every local in memory so that the compiler, not the register
    /// snapshot hardware, privatizes it.
    pub privatize_all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Home {
    Reg(u8),
    Mem(usize),
}

/// Private copies of one variable inside one secure region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shadow {
    pub var: VarId,
    pub len: usize,
    pub nt: usize,
    pub t: usize,
}

/// Shadow storage chosen for one secure `if`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPlan {
    pub node: usize,
    pub pred_addr: usize,
    pub shadows: Vec<Shadow>,
}

struct Frame {
    shadows: BTreeMap<VarId, Shadow>,
    in_else: bool,
}

pub struct Output {
    pub program: Program,
    pub layout: DataLayout,
    pub regions: Vec<RegionPlan>,
}

struct Gen<'a> {
    ast: &'a Ast,
    taint: &'a TaintState,
    opts: CodegenOptions,
    code: Vec<Instruction>,
    homes: Vec<Option<Home>>,
    next_mem: usize,
    free_temps: Vec<u8>,
    free_locals: Vec<u8>,
    frames: Vec<Frame>,
    regions: Vec<RegionPlan>,
    spill_slots: Vec<usize>,
    spill_depth: usize,
    line: u32,
}

fn is_bool(e: &Expr) -> bool {
    match e {
        Expr::Const(c) => *c == 0 || *c == 1,
        Expr::Unary(UnOp::Not, _) => true,
        Expr::Binary(op, _, _) => op.is_comparison() || matches!(op, BinOp::LogAnd | BinOp::LogOr),
        _ => false,
    }
}

/// Declared and written variables of a statement list, nested bodies
/// included.
fn effects(body: &[Stmt], declared: &mut BTreeSet<VarId>, written: &mut BTreeSet<VarId>) {
    for s in body {
        match &s.kind {
            StmtKind::Let { var, .. } => {
                declared.insert(*var);
            }
            StmtKind::Assign { var, .. } => {
                written.insert(*var);
            }
            StmtKind::Store { array, .. } => {
                written.insert(*array);
            }
            StmtKind::If { then_body, else_body, .. } => {
                effects(then_body, declared, written);
                effects(else_body, declared, written);
            }
            StmtKind::While { body, .. } => effects(body, declared, written),
            StmtKind::For { var, body, .. } => {
                declared.insert(*var);
                effects(body, declared, written);
            }
        }
    }
}

impl<'a> Gen<'a> {
    fn emit(&mut self, ins: Instruction) -> usize {
        self.code.push(ins.with_line(self.line));
        self.code.len() - 1
    }

    fn here(&self) -> usize {
        self.code.len()
    }

    fn patch(&mut self, at: usize, target: usize) {
        self.code[at].imm = Some(target as i64);
    }

    fn alloc_mem(&mut self, words: usize) -> usize {
        self.next_mem += words;
        self.next_mem - words
    }

    fn temp(&mut self) -> Result<u8, CompileError> {
        self.free_temps.pop().ok_or(CompileError::RegisterPressure { line: self.line })
    }

    fn release(&mut self, r: u8) {
        if self.is_temp(r) {
            debug_assert!(!self.free_temps.contains(&r));
            self.free_temps.push(r);
        }
    }

    fn home(&self, v: VarId) -> Home {
        self.homes[v].unwrap_or_else(|| panic!("variable {} used before declaration", self.ast.vars.display_name(v)))
    }

    /// Address of a memory-homed variable as seen from the current arm.
    fn addr(&self, v: VarId) -> usize {
        for f in self.frames.iter().rev() {
            if let Some(s) = f.shadows.get(&v) {
                return if f.in_else { s.t } else { s.nt };
            }
        }
        match self.home(v) {
            Home::Mem(a) => a,
            Home::Reg(_) => unreachable!("register-homed variable has no address"),
        }
    }

    fn declare(&mut self, v: VarId) {
        let info = self.ast.vars.get(v);
        let home = if info.is_array() || self.opts.privatize_all {
            Home::Mem(self.alloc_mem(info.len()))
        } else {
            match self.free_locals.pop() {
                Some(r) => Home::Reg(r),
                None => Home::Mem(self.alloc_mem(1)),
            }
        };
        self.homes[v] = Some(home);
    }

    fn undeclare(&mut self, v: VarId) {
        if let Some(Home::Reg(r)) = self.homes[v].take() {
            self.free_locals.push(r);
        }
    }

    fn check_index(&self, index: &Expr) -> Result<(), CompileError> {
        if self.opts.secure && index.reads_any(&|v| self.taint.is_tainted(v)) {
            return Err(CompileError::Rejected {
                kind: RejectKind::SecretIndex,
                line: self.line,
                message: "secret-dependent memory address".into(),
            });
        }
        Ok(())
    }

    /// Register holding `e`; a temporary unless `e` is a constant 0/1 or a
    /// register-homed variable.
    fn value(&mut self, e: &Expr) -> Result<u8, CompileError> {
        match e {
            Expr::Const(0) => Ok(R_ZERO),
            Expr::Const(1) => Ok(R_ONE),
            Expr::Var(v) => match self.home(*v) {
                Home::Reg(r) => Ok(r),
                Home::Mem(_) => self.compute(e, None),
            },
            _ => self.compute(e, None),
        }
    }

    fn is_temp(&self, r: u8) -> bool {
        (FIRST_TEMP..FIRST_LOCAL).contains(&r) && usize::from(r) < self.opts.register_count
    }

    /// Temporaries needed to evaluate `e` into a fresh register.
    fn need(&self, e: &Expr) -> usize {
        let held = |n: usize| usize::from(n > 0);
        match e {
            Expr::Const(0) | Expr::Const(1) => 0,
            Expr::Var(v) if matches!(self.homes[*v], Some(Home::Reg(_))) => 0,
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Load(_, i) => self.need(i).max(1),
            Expr::Unary(UnOp::Neg, x) => self.need(x).max(1),
            Expr::Unary(UnOp::Not, x) => self.need(x).max(held(self.need(x)) + 2),
            Expr::Binary(op, a, b) => {
                let (l, r) = (self.need(a), self.need(b));
                let su = if l == r { l + 1 } else { l.max(r) };
                let extra = match op {
                    BinOp::Rem | BinOp::Ne | BinOp::Eq | BinOp::LogOr => 2,
                    BinOp::LogAnd => 3,
                    BinOp::Le | BinOp::Ge => 1,
                    _ => 0,
                };
                su.max(held(l) + held(r) + extra).max(1)
            }
        }
    }

    /// Evaluates both operands, larger first. When the second no longer
    /// fits in the free temporaries, the first is parked in a scratch word.
    fn operands(&mut self, a: &Expr, b: &Expr) -> Result<(u8, u8), CompileError> {
        let swap = self.need(b) > self.need(a);
        let (first, second) = if swap { (b, a) } else { (a, b) };
        let mut rf = self.value(first)?;
        let rs = if self.is_temp(rf) && self.need(second) > self.free_temps.len() {
            if self.spill_depth == self.spill_slots.len() {
                let slot = self.alloc_mem(1);
                self.spill_slots.push(slot);
            }
            let slot = self.spill_slots[self.spill_depth] as i64;
            self.spill_depth += 1;
            self.emit(Instruction::st(R_ZERO, rf, slot));
            self.release(rf);
            let rs = self.value(second)?;
            rf = self.temp()?;
            self.emit(Instruction::ld(rf, R_ZERO, slot));
            self.spill_depth -= 1;
            rs
        } else {
            self.value(second)?
        };
        Ok(if swap { (rs, rf) } else { (rf, rs) })
    }

    /// `dest`, else a temporary operand (consumed), else a new temporary.
    fn pick(&mut self, dest: Option<u8>, operands: &[u8]) -> Result<u8, CompileError> {
        if let Some(d) = dest {
            return Ok(d);
        }
        match operands.iter().copied().find(|&r| self.is_temp(r)) {
            Some(r) => Ok(r),
            None => self.temp(),
        }
    }

    /// Releases operand temporaries other than the result register.
    fn done(&mut self, d: u8, operands: &[u8]) {
        for (i, &r) in operands.iter().enumerate() {
            if r != d && !operands[..i].contains(&r) {
                self.release(r);
            }
        }
    }

    /// `d = (x != 0)`; `x` is read before `d` is written.
    fn nonzero(&mut self, d: u8, x: u8) -> Result<(), CompileError> {
        let t = self.temp()?;
        self.emit(Instruction::alu(Opcode::Sub, t, R_ZERO, x));
        self.emit(Instruction::alu(Opcode::Or, t, x, t));
        self.emit(Instruction::alu_imm(Opcode::Shr, d, t, 63));
        self.release(t);
        Ok(())
    }

    /// 0/1 form of `r`, in a new temporary unless `e` is already boolean.
    fn normalized(&mut self, e: &Expr, r: u8) -> Result<u8, CompileError> {
        if is_bool(e) {
            return Ok(r);
        }
        let t = self.temp()?;
        self.nonzero(t, r)?;
        Ok(t)
    }

    /// Evaluates `e` into `dest` (a new or reused temporary when `None`) and
    /// returns the register. Every sequence writes its result only in its
    /// last instruction, so the result may share a register with an operand.
    fn compute(&mut self, e: &Expr, dest: Option<u8>) -> Result<u8, CompileError> {
        match e {
            Expr::Const(c) => {
                let d = self.pick(dest, &[])?;
                self.emit(Instruction::ldi(d, *c));
                Ok(d)
            }
            Expr::Var(v) => match self.home(*v) {
                Home::Reg(r) => {
                    let d = dest.unwrap_or(r);
                    if r != d {
                        self.emit(Instruction::mov(d, r));
                    }
                    Ok(d)
                }
                Home::Mem(_) => {
                    let d = self.pick(dest, &[])?;
                    let a = self.addr(*v);
                    self.emit(Instruction::ld(d, R_ZERO, a as i64));
                    Ok(d)
                }
            },
            Expr::Load(array, index) => {
                self.check_index(index)?;
                let base = self.addr(*array) as i64;
                if let Some(c) = index.as_const() {
                    let d = self.pick(dest, &[])?;
                    self.emit(Instruction::ld(d, R_ZERO, base + c));
                    return Ok(d);
                }
                let ri = self.value(index)?;
                let d = self.pick(dest, &[ri])?;
                self.emit(Instruction::ld(d, ri, base));
                self.done(d, &[ri]);
                Ok(d)
            }
            Expr::Unary(op, x) => {
                let rx = self.value(x)?;
                let d = self.pick(dest, &[rx])?;
                match op {
                    UnOp::Neg => {
                        self.emit(Instruction::alu(Opcode::Sub, d, R_ZERO, rx));
                    }
                    UnOp::Not => {
                        let n = self.normalized(x, rx)?;
                        self.emit(Instruction::alu(Opcode::Xor, d, n, R_ONE));
                        if n != rx {
                            self.release(n);
                        }
                    }
                }
                self.done(d, &[rx]);
                Ok(d)
            }
            Expr::Binary(op, a, b) if op.needs_constant_rhs() => {
                let c = b.as_const().expect("constant right operand");
                let ra = self.value(a)?;
                let d = self.pick(dest, &[ra])?;
                match op {
                    BinOp::Div => {
                        self.emit(Instruction::alu_imm(Opcode::Divc, d, ra, c));
                    }
                    BinOp::Rem => {
                        let (q, k) = (self.temp()?, self.temp()?);
                        self.emit(Instruction::alu_imm(Opcode::Divc, q, ra, c));
                        self.emit(Instruction::ldi(k, c));
                        self.emit(Instruction::alu(Opcode::Mul, q, q, k));
                        self.emit(Instruction::alu(Opcode::Sub, d, ra, q));
                        self.release(k);
                        self.release(q);
                    }
                    BinOp::Shl => {
                        self.emit(Instruction::alu_imm(Opcode::Shl, d, ra, c));
                    }
                    BinOp::Shr => {
                        self.emit(Instruction::alu_imm(Opcode::Shr, d, ra, c));
                    }
                    _ => unreachable!("only these take a constant"),
                }
                self.done(d, &[ra]);
                Ok(d)
            }
            Expr::Binary(op, a, b) => {
                let (ra, rb) = self.operands(a, b)?;
                let d = self.pick(dest, &[ra, rb])?;
                let simple = match op {
                    BinOp::Add => Some(Opcode::Add),
                    BinOp::Sub => Some(Opcode::Sub),
                    BinOp::Mul => Some(Opcode::Mul),
                    BinOp::And => Some(Opcode::And),
                    BinOp::Or => Some(Opcode::Or),
                    BinOp::Xor => Some(Opcode::Xor),
                    BinOp::Lt => Some(Opcode::Slt),
                    _ => None,
                };
                match (simple, op) {
                    (Some(opc), _) => {
                        self.emit(Instruction::alu(opc, d, ra, rb));
                    }
                    (None, BinOp::Gt) => {
                        self.emit(Instruction::alu(Opcode::Slt, d, rb, ra));
                    }
                    (None, BinOp::Le | BinOp::Ge) => {
                        let t = self.temp()?;
                        let (x, y) = if *op == BinOp::Le { (rb, ra) } else { (ra, rb) };
                        self.emit(Instruction::alu(Opcode::Slt, t, x, y));
                        self.emit(Instruction::alu(Opcode::Xor, d, t, R_ONE));
                        self.release(t);
                    }
                    (None, BinOp::Ne | BinOp::Eq) => {
                        let t = self.temp()?;
                        self.emit(Instruction::alu(Opcode::Sub, t, ra, rb));
                        if *op == BinOp::Ne {
                            self.nonzero(d, t)?;
                        } else {
                            self.nonzero(t, t)?;
                            self.emit(Instruction::alu(Opcode::Xor, d, t, R_ONE));
                        }
                        self.release(t);
                    }
                    (None, BinOp::LogOr) => {
                        if is_bool(a) && is_bool(b) {
                            self.emit(Instruction::alu(Opcode::Or, d, ra, rb));
                        } else {
                            let t = self.temp()?;
                            self.emit(Instruction::alu(Opcode::Or, t, ra, rb));
                            self.nonzero(d, t)?;
                            self.release(t);
                        }
                    }
                    (None, BinOp::LogAnd) => {
                        let na = self.normalized(a, ra)?;
                        let nb = self.normalized(b, rb)?;
                        self.emit(Instruction::alu(Opcode::And, d, na, nb));
                        if nb != rb {
                            self.release(nb);
                        }
                        if na != ra {
                            self.release(na);
                        }
                    }
                    _ => unreachable!("every operator is covered"),
                }
                self.done(d, &[ra, rb]);
                Ok(d)
            }
        }
    }

    fn assign(&mut self, var: VarId, value: &Expr) -> Result<(), CompileError> {
        match self.home(var) {
            Home::Reg(r) => self.compute(value, Some(r)).map(drop),
            Home::Mem(_) => {
                let rv = self.value(value)?;
                let a = self.addr(var) as i64;
                self.emit(Instruction::st(R_ZERO, rv, a));
                self.release(rv);
                Ok(())
            }
        }
    }

    fn body(&mut self, body: &[Stmt]) -> Result<(), CompileError> {
        let mut scope = Vec::new();
        for s in body {
            self.line = s.line;
            self.stmt(s, &mut scope)?;
        }
        for v in scope.into_iter().rev() {
            self.undeclare(v);
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, scope: &mut Vec<VarId>) -> Result<(), CompileError> {
        match &s.kind {
            StmtKind::Let { var, init } => {
                self.declare(*var);
                scope.push(*var);
                if self.ast.vars.get(*var).is_array() {
                    let base = self.addr(*var);
                    for w in 0..self.ast.vars.get(*var).len() {
                        self.emit(Instruction::st(R_ZERO, R_ZERO, (base + w) as i64));
                    }
                } else {
                    let init = init.clone().unwrap_or(Expr::Const(0));
                    self.assign(*var, &init)?;
                }
            }
            StmtKind::Assign { var, value } => self.assign(*var, value)?,
            StmtKind::Store { array, index, value } => {
                self.check_index(index)?;
                let base = self.addr(*array) as i64;
                match index.as_const() {
                    Some(c) => {
                        let rv = self.value(value)?;
                        self.emit(Instruction::st(R_ZERO, rv, base + c));
                        self.release(rv);
                    }
                    None => {
                        let (ri, rv) = self.operands(index, value)?;
                        self.emit(Instruction::st(ri, rv, base));
                        self.release(rv);
                        self.release(ri);
                    }
                }
            }
            StmtKind::If { id, cond, then_body, else_body } => {
                if self.opts.secure && self.taint.is_secret_branch(*id) {
                    self.secure_if(*id, cond, then_body, else_body)?;
                } else {
                    let rc = self.value(cond)?;
                    let bz = self.emit(Instruction::branch(Opcode::Bz, rc, 0, false));
                    self.release(rc);
                    self.body(then_body)?;
                    if else_body.is_empty() {
                        let join = self.here();
                        self.patch(bz, join);
                    } else {
                        self.line = s.line;
                        let jmp = self.emit(Instruction::jmp(0));
                        let else_at = self.here();
                        self.patch(bz, else_at);
                        self.body(else_body)?;
                        let join = self.here();
                        self.patch(jmp, join);
                    }
                }
            }
            StmtKind::While { id, cond, body } => {
                self.reject_secret_loop(*id)?;
                let top = self.here();
                let rc = self.value(cond)?;
                let bz = self.emit(Instruction::branch(Opcode::Bz, rc, 0, false));
                self.release(rc);
                self.body(body)?;
                self.line = s.line;
                self.emit(Instruction::jmp(top));
                let exit = self.here();
                self.patch(bz, exit);
            }
            StmtKind::For { id, var, lo, hi, body } => {
                self.reject_secret_loop(*id)?;
                self.declare(*var);
                self.assign(*var, lo)?;
                let top = self.here();
                let cond = Expr::bin(BinOp::Lt, Expr::Var(*var), hi.clone());
                let rc = self.value(&cond)?;
                let bz = self.emit(Instruction::branch(Opcode::Bz, rc, 0, false));
                self.release(rc);
                self.body(body)?;
                self.line = s.line;
                self.assign(*var, &Expr::bin(BinOp::Add, Expr::Var(*var), Expr::Const(1)))?;
                self.emit(Instruction::jmp(top));
                let exit = self.here();
                self.patch(bz, exit);
                self.undeclare(*var);
            }
        }
        Ok(())
    }

    fn reject_secret_loop(&self, id: usize) -> Result<(), CompileError> {
        if self.opts.secure && self.taint.is_secret_branch(id) {
            return Err(CompileError::Rejected {
                kind: RejectKind::SecretLoop,
                line: self.line,
                message: "loop condition depends on a secret".into(),
            });
        }
        Ok(())
    }

    fn copy_words(&mut self, from: usize, to: &[usize], len: usize) -> Result<(), CompileError> {
        let t = self.temp()?;
        for w in 0..len {
            self.emit(Instruction::ld(t, R_ZERO, (from + w) as i64));
            for dst in to {
                self.emit(Instruction::st(R_ZERO, t, (dst + w) as i64));
            }
        }
        self.release(t);
        Ok(())
    }

    fn secure_if(&mut self, id: usize, cond: &Expr, then_body: &[Stmt], else_body: &[Stmt]) -> Result<(), CompileError> {
        let line = self.line;
        if self.frames.len() + 1 > self.opts.jb_capacity {
            return Err(CompileError::Rejected {
                kind: RejectKind::NestingTooDeep,
                line,
                message: format!("secure nesting deeper than the jbTable capacity {}", self.opts.jb_capacity),
            });
        }
        let (mut declared, mut written) = (BTreeSet::new(), BTreeSet::new());
        effects(then_body, &mut declared, &mut written);
        effects(else_body, &mut declared, &mut written);
        let mut shadows = BTreeMap::new();
        for v in written.difference(&declared) {
            if matches!(self.home(*v), Home::Mem(_)) {
                let len = self.ast.vars.get(*v).len();
                let (nt, t) = (self.alloc_mem(len), self.alloc_mem(len));
                shadows.insert(*v, Shadow { var: *v, len, nt, t });
            }
        }
        for s in shadows.values() {
            let from = self.addr(s.var);
            self.copy_words(from, &[s.nt, s.t], s.len)?;
        }
        let pred = self.alloc_mem(1);
        self.regions.push(RegionPlan { node: id, pred_addr: pred, shadows: shadows.values().copied().collect() });

        let rc = self.value(cond)?;
        self.emit(Instruction::st(R_ZERO, rc, pred as i64));
        let sjmp = self.emit(Instruction::branch(Opcode::Bz, rc, 0, true));
        self.release(rc);

        self.frames.push(Frame { shadows, in_else: false });
        self.body(then_body)?;
        self.line = line;
        let jmp = if else_body.is_empty() { None } else { Some(self.emit(Instruction::jmp(0))) };
        let else_at = self.here();
        self.patch(sjmp, else_at);
        self.frames.last_mut().expect("frame pushed above").in_else = true;
        self.body(else_body)?;
        self.line = line;
        let join = self.here();
        if let Some(j) = jmp {
            self.patch(j, join);
        }
        self.emit(Instruction::bare(Opcode::Eosjmp));
        let frame = self.frames.pop().expect("frame pushed above");

        if !frame.shadows.is_empty() {
            let (a, p, b) = (self.temp()?, self.temp()?, self.temp()?);
            self.emit(Instruction::ld(p, R_ZERO, pred as i64));
            for s in frame.shadows.values() {
                let dst = self.addr(s.var);
                for w in 0..s.len {
                    self.emit(Instruction::ld(a, R_ZERO, (s.t + w) as i64));
                    self.emit(Instruction::ld(b, R_ZERO, (s.nt + w) as i64));
                    self.emit(Instruction::cmov(a, p, b));
                    self.emit(Instruction::st(R_ZERO, a, (dst + w) as i64));
                }
            }
            self.release(b);
            self.release(p);
            self.release(a);
        }
        Ok(())
    }
}

/// Lowers `ast` to a program. Globals occupy addresses `0..` in declaration
/// order; compiler storage follows them.
pub fn codegen(ast: &Ast, taint: &TaintState, opts: CodegenOptions) -> Result<Output, CompileError> {
    let r = opts.register_count;
    if !(usize::from(FIRST_TEMP) + 3..=256).contains(&r) {
        return Err(CompileError::Semantic { line: 0, message: format!("unsupported register count {r}") });
    }
    let temp_end = (FIRST_LOCAL as usize).min(r) as u8;
    let mut g = Gen {
        ast,
        taint,
        opts,
        code: Vec::new(),
        homes: vec![None; ast.vars.len()],
        next_mem: 0,
        free_temps: (FIRST_TEMP..temp_end).rev().collect(),
        free_locals: (FIRST_LOCAL as usize..r).rev().map(|x| x as u8).collect(),
        frames: Vec::new(),
        regions: Vec::new(),
        spill_slots: Vec::new(),
        spill_depth: 0,
        line: 0,
    };
    let mut globals = Vec::new();
    for (id, v) in ast.vars.globals() {
        let addr = g.alloc_mem(v.len());
        g.homes[id] = Some(Home::Mem(addr));
        globals.push(DataSymbol { name: v.name.clone(), addr, len: v.len(), secret: v.secret, is_array: v.is_array() });
    }
    g.emit(Instruction::ldi(R_ZERO, 0));
    g.emit(Instruction::ldi(R_ONE, 1));
    g.body(&ast.body)?;
    g.line = 0;
    g.emit(Instruction::bare(Opcode::Halt));

    let mut program = Program::new(g.code);
    program.register_count = r;
    program.data_size = g.next_mem;
    let layout = DataLayout { globals, data_size: g.next_mem };
    Ok(Output { program, layout, regions: g.regions })
}

#[cfg(test)]
mod tests {
    use super::super::cfg::lower;
    use super::super::parse;
    use super::super::taint::taint;
    use super::*;

    fn gen(src: &str, secure: bool, privatize_all: bool) -> Result<Output, CompileError> {
        let ast = parse(src).unwrap();
        let t = taint(&ast, &lower(&ast));
        codegen(&ast, &t, CodegenOptions { secure, register_count: 16, jb_capacity: 30, privatize_all })
    }

    fn opcodes(p: &Program) -> Vec<Opcode> {
        p.instructions.iter().map(|i| i.opcode).collect()
    }

    #[test]
    fn add_of_locals_is_one_instruction() {
        let out = gen("var o;\nfn main() { let a = 3; let b = 4; let x = a + b; o = x; }", false, false).unwrap();
        let adds = out.program.instructions.iter().filter(|i| i.opcode == Opcode::Add).count();
        assert_eq!(adds, 1);
        assert!(opcodes(&out.program).ends_with(&[Opcode::Add, Opcode::St, Opcode::Halt]));
    }

    #[test]
    fn public_store_uses_computed_address() {
        let out = gen("var i, a[8];\nfn main() { a[i] = 5; }", false, false).unwrap();
        let st = out.program.instructions.iter().find(|i| i.opcode == Opcode::St).unwrap();
        assert_eq!(st.imm, Some(1));
        assert_ne!(st.src1, Some(R_ZERO));
    }

    #[test]
    fn no_secret_branches_means_identical_output() {
        let src = "@secret s;\nvar x, p;\nfn main() { if (p) { x = s; } else { x = 2; } }";
        assert_eq!(gen(src, false, false).unwrap().program, gen(src, true, false).unwrap().program);
    }

    #[test]
    fn nested_if_has_two_secure_branches_and_merges() {
        let out = gen(super::super::NESTED_IF, true, false).unwrap();
        assert_eq!(out.program.secure_branch_count(), 2);
        assert_eq!(out.program.eosjmp_count(), 2);
        assert_eq!(out.regions.len(), 2);
        let cmovs = out.program.instructions.iter().filter(|i| i.opcode == Opcode::Cmov).count();
        // inner region merges k, outer region merges j and k
        assert_eq!(cmovs, 3);
    }

    #[test]
    fn originals_are_not_stored_inside_secblocks() {
        let out = gen(super::super::NESTED_IF, true, false).unwrap();
        let p = &out.program;
        let sjmps: Vec<usize> = (0..p.len()).filter(|&i| p.instructions[i].secure_prefix).collect();
        let outer = sjmps[0];
        let last_eos = (0..p.len()).rev().find(|&i| p.instructions[i].opcode == Opcode::Eosjmp).unwrap();
        let globals: Vec<i64> = out.layout.globals.iter().map(|g| g.addr as i64).collect();
        for ins in &p.instructions[outer..last_eos] {
            if ins.opcode == Opcode::St {
                assert!(!globals.contains(&ins.imm.unwrap()), "{ins:?}");
            }
        }
    }

    #[test]
    fn privatize_all_shadows_locals() {
        let src = "@secret s;\nvar o;\nfn main() { let x = 1; if (s) { x = 2; } o = x; }";
        let reg = gen(src, true, false).unwrap();
        let mem = gen(src, true, true).unwrap();
        assert!(reg.regions[0].shadows.is_empty());
        assert_eq!(mem.regions[0].shadows.len(), 1);
    }

    #[test]
    fn rejections() {
        let cases = [
            ("@secret s;\nvar x;\nfn main() { while (s) { s = s - 1; } }", RejectKind::SecretLoop),
            ("@secret s;\nvar x;\nfn main() { for i in 0..s { x = i; } }", RejectKind::SecretLoop),
            ("@secret s;\nvar a[4], x;\nfn main() { x = a[s & 3]; }", RejectKind::SecretIndex),
            ("@secret s;\nvar a[4];\nfn main() { if (s) { a[s & 1] = 1; } }", RejectKind::SecretIndex),
        ];
        for (src, kind) in cases {
            match gen(src, true, false) {
                Err(CompileError::Rejected { kind: k, .. }) => assert_eq!(k, kind, "{src}"),
                Err(e) => panic!("{src}: {e}"),
                Ok(_) => panic!("{src}: accepted"),
            }
            assert!(gen(src, false, false).is_ok(), "{src}");
        }
    }

    #[test]
    fn nesting_beyond_capacity_is_rejected() {
        let mut src = String::from("@secret s;\nvar x;\nfn main() {\n");
        for _ in 0..31 {
            src.push_str("if (s) {\n");
        }
        src.push_str("x = 1;\n");
        for _ in 0..31 {
            src.push_str("}\n");
        }
        src.push('}');
        let err = gen(&src, true, false).err().unwrap();
        assert!(matches!(err, CompileError::Rejected { kind: RejectKind::NestingTooDeep, .. }), "{err}");
    }

    #[test]
    fn deterministic() {
        let a = gen(super::super::NESTED_IF, true, false).unwrap().program;
        let b = gen(super::super::NESTED_IF, true, false).unwrap().program;
        assert_eq!(crate::isa::encode(&a).unwrap(), crate::isa::encode(&b).unwrap());
    }

    #[test]
    fn deep_expressions_spill_and_stay_correct() {
        use crate::machine::{run, MachineConfig};
        use crate::trace::NullSink;
        let mut e = String::from("x");
        for k in 0..7 {
            e = format!("(({e}) * (x + {k} == {e})) + (x % 7 - ({e}))");
        }
        let src = format!("var x, y;\nfn main() {{ y = {e}; }}");
        let ast = parse(&src).unwrap();
        let out = gen(&src, false, false).unwrap();
        for x in [-3, 0, 5] {
            let inputs = [("x".to_string(), vec![x])].into_iter().collect();
            let mem = out.layout.initial_memory(&inputs).unwrap();
            let r = run(&out.program, &mem, &[], crate::Mode::Legacy, &MachineConfig::default(), NullSink).unwrap();
            let expected = super::super::interp::interpret(&ast, &inputs, 1_000_000).unwrap();
            assert_eq!(out.layout.read_globals(&r.final_mem), expected);
        }
        assert!(out.layout.data_size > 2, "expected spill slots");
    }

    #[test]
    fn too_few_registers_is_register_pressure() {
        let ast = parse("var a, b, c;\nfn main() { c = (a != 3) && (b != 4); }").unwrap();
        let t = taint(&ast, &lower(&ast));
        let opts = CodegenOptions { secure: false, register_count: 5, jb_capacity: 30, privatize_all: false };
        assert!(matches!(codegen(&ast, &t, opts), Err(CompileError::RegisterPressure { .. })));
    }

    #[test]
    fn regions_sharing_a_join_get_adjacent_eosjmps() {
        let src = "@secret s1, s2;\nvar o;\nfn main() { let x = 0; if (s1) { x = 1; } else { if (s2) { x = 2; } } o = x; }";
        let p = gen(src, true, false).unwrap().program;
        let eos: Vec<usize> = (0..p.len()).filter(|&i| p.instructions[i].opcode == Opcode::Eosjmp).collect();
        assert_eq!(eos.len(), 2);
        assert_eq!(eos[1], eos[0] + 1);
        // the inner branch's join comes first
        let sj: Vec<usize> = (0..p.len()).filter(|&i| p.instructions[i].secure_prefix).collect();
        assert_eq!(p.instructions[sj[1]].target(), Some(eos[0]));
    }
}
