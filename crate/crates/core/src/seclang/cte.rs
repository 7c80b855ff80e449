//! Constant-time expression transform.
//!
//! Every `if` whose condition is secret, or that sits under a secret guard,
//! is replaced by arithmetic on 0/1 guards: the condition becomes
//! `let g = bool(cond)`, the then arm runs under `G*g` and the else arm
//! under `G*(1-g)`, and each assignment `x = e` under guard `G` becomes
//! `x = G*e + (1-G)*x`. Declarations stay unguarded. Loops are kept when
//! their trip count is public.

use std::collections::BTreeSet;

use super::ast::{Ast, BinOp, Expr, Stmt, StmtKind, UnOp, VarId, VarInfo, VarKind};
use super::{CompileError, RejectKind};

/// Variables that may hold secret-dependent values in the CTE sense:
/// explicit flows plus anything assigned under a secret guard.
pub fn cte_taint(ast: &Ast) -> BTreeSet<VarId> {
    fn walk(body: &[Stmt], secret_ctx: bool, t: &mut BTreeSet<VarId>) -> bool {
        let mut changed = false;
        let reads_t = |e: &Expr, t: &BTreeSet<VarId>| e.reads_any(&|v| t.contains(&v));
        for s in body {
            match &s.kind {
                StmtKind::Let { var, init } => {
                    if init.as_ref().is_some_and(|e| reads_t(e, t)) {
                        changed |= t.insert(*var);
                    }
                }
                StmtKind::Assign { var, value } => {
                    if secret_ctx || reads_t(value, t) {
                        changed |= t.insert(*var);
                    }
                }
                StmtKind::Store { array, index, value } => {
                    if secret_ctx || reads_t(value, t) || reads_t(index, t) {
                        changed |= t.insert(*array);
                    }
                }
                StmtKind::If { cond, then_body, else_body, .. } => {
                    let inner = secret_ctx || reads_t(cond, t);
                    changed |= walk(then_body, inner, t);
                    changed |= walk(else_body, inner, t);
                }
                StmtKind::While { cond, body, .. } => {
                    let inner = secret_ctx || reads_t(cond, t);
                    changed |= walk(body, inner, t);
                }
                StmtKind::For { body, .. } => changed |= walk(body, secret_ctx, t),
            }
        }
        changed
    }
    let mut t: BTreeSet<VarId> = ast.secret_globals().into_iter().collect();
    while walk(&ast.body, false, &mut t) {}
    t
}

fn reject(kind: RejectKind, line: u32, message: &str) -> CompileError {
    CompileError::Rejected { kind, line, message: message.into() }
}

fn check(body: &[Stmt], secret_ctx: bool, t: &BTreeSet<VarId>) -> Result<(), CompileError> {
    let tainted = |e: &Expr| e.reads_any(&|v| t.contains(&v));
    let check_loads = |e: &Expr, line: u32| {
        let mut idx = Vec::new();
        e.load_indices(&mut idx);
        if idx.into_iter().any(tainted) {
            return Err(reject(RejectKind::SecretIndex, line, "secret-dependent array index"));
        }
        Ok(())
    };
    for s in body {
        let line = s.line;
        match &s.kind {
            StmtKind::Let { init, .. } => {
                if let Some(e) = init {
                    check_loads(e, line)?;
                }
            }
            StmtKind::Assign { value, .. } => check_loads(value, line)?,
            StmtKind::Store { index, value, .. } => {
                if tainted(index) {
                    return Err(reject(RejectKind::SecretIndex, line, "secret-dependent array index"));
                }
                check_loads(index, line)?;
                check_loads(value, line)?;
            }
            StmtKind::If { cond, then_body, else_body, .. } => {
                check_loads(cond, line)?;
                let inner = secret_ctx || tainted(cond);
                check(then_body, inner, t)?;
                check(else_body, inner, t)?;
            }
            StmtKind::While { cond, body, .. } => {
                if secret_ctx || tainted(cond) {
                    return Err(reject(RejectKind::SecretLoop, line, "loop with a secret-dependent trip count"));
                }
                check_loads(cond, line)?;
                check(body, secret_ctx, t)?;
            }
            StmtKind::For { lo, hi, body, .. } => {
                if tainted(lo) || tainted(hi) {
                    return Err(reject(RejectKind::SecretLoopBound, line, "secret-dependent loop bound"));
                }
                check_loads(lo, line)?;
                check_loads(hi, line)?;
                check(body, secret_ctx, t)?;
            }
        }
    }
    Ok(())
}

/// 0/1 value of a condition.
pub fn booleanize(e: &Expr) -> Expr {
    let one = || Expr::Const(1);
    match e {
        Expr::Binary(BinOp::LogOr, a, b) => {
            let (a, b) = (booleanize(a), booleanize(b));
            Expr::bin(BinOp::Sub, Expr::bin(BinOp::Add, a.clone(), b.clone()), Expr::bin(BinOp::Mul, a, b))
        }
        Expr::Binary(BinOp::LogAnd, a, b) => Expr::bin(BinOp::Mul, booleanize(a), booleanize(b)),
        Expr::Unary(UnOp::Not, a) => Expr::bin(BinOp::Sub, one(), booleanize(a)),
        Expr::Binary(op, _, _) if op.is_comparison() => e.clone(),
        Expr::Const(c) => Expr::Const(i64::from(*c != 0)),
        _ => Expr::bin(BinOp::Ne, e.clone(), Expr::Const(0)),
    }
}

fn mul_guard(outer: &Option<Expr>, g: Expr) -> Expr {
    match outer {
        Some(o) => Expr::bin(BinOp::Mul, o.clone(), g),
        None => g,
    }
}

/// `G*new + (1-G)*old`
fn select(guard: &Expr, new: Expr, old: Expr) -> Expr {
    Expr::bin(
        BinOp::Add,
        Expr::bin(BinOp::Mul, guard.clone(), new),
        Expr::bin(BinOp::Mul, Expr::bin(BinOp::Sub, Expr::Const(1), guard.clone()), old),
    )
}

struct Transformer<'a> {
    ast: &'a mut Ast,
    tainted: &'a BTreeSet<VarId>,
    guards: usize,
}

impl Transformer<'_> {
    fn body(&mut self, body: &[Stmt], guard: &Option<Expr>) -> Vec<Stmt> {
        let mut out = Vec::with_capacity(body.len());
        for s in body {
            let line = s.line;
            match &s.kind {
                StmtKind::Let { .. } => out.push(s.clone()),
                StmtKind::Assign { var, value } => {
                    let value = match guard {
                        Some(g) => select(g, value.clone(), Expr::Var(*var)),
                        None => value.clone(),
                    };
                    out.push(Stmt::new(StmtKind::Assign { var: *var, value }, line));
                }
                StmtKind::Store { array, index, value } => {
                    let value = match guard {
                        Some(g) => select(g, value.clone(), Expr::Load(*array, Box::new(index.clone()))),
                        None => value.clone(),
                    };
                    out.push(Stmt::new(StmtKind::Store { array: *array, index: index.clone(), value }, line));
                }
                StmtKind::If { id, cond, then_body, else_body } => {
                    let secret = cond.reads_any(&|v| self.tainted.contains(&v));
                    if guard.is_none() && !secret {
                        let then_body = self.body(then_body, guard);
                        let else_body = self.body(else_body, guard);
                        out.push(Stmt::new(StmtKind::If { id: *id, cond: cond.clone(), then_body, else_body }, line));
                        continue;
                    }
                    self.guards += 1;
                    let g = self.ast.vars.add(VarInfo {
                        name: format!("g{}", self.guards),
                        kind: VarKind::Scalar,
                        global: false,
                        secret: false,
                        for_index: false,
                        synthetic: true,
                        line,
                    });
                    out.push(Stmt::new(StmtKind::Let { var: g, init: Some(booleanize(cond)) }, line));
                    let then_guard = Some(mul_guard(guard, Expr::Var(g)));
                    let else_guard = Some(mul_guard(guard, Expr::bin(BinOp::Sub, Expr::Const(1), Expr::Var(g))));
                    out.extend(self.body(then_body, &then_guard));
                    out.extend(self.body(else_body, &else_guard));
                }
                StmtKind::While { id, cond, body } => {
                    let body = self.body(body, guard);
                    out.push(Stmt::new(StmtKind::While { id: *id, cond: cond.clone(), body }, line));
                }
                StmtKind::For { id, var, lo, hi, body } => {
                    let body = self.body(body, guard);
                    out.push(Stmt::new(
                        StmtKind::For { id: *id, var: *var, lo: lo.clone(), hi: hi.clone(), body },
                        line,
                    ));
                }
            }
        }
        out
    }
}

/// Removes every secret-dependent branch. Rejects secret loops, secret loop
/// bounds and secret array indexes.
pub fn transform_cte(ast: &Ast) -> Result<Ast, CompileError> {
    let tainted = cte_taint(ast);
    check(&ast.body, false, &tainted)?;
    let mut out = Ast { vars: ast.vars.clone(), body: Vec::new(), next_node: ast.next_node };
    let body = Transformer { ast: &mut out, tainted: &tainted, guards: 0 }.body(&ast.body, &None);
    out.body = body;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::interp::{interpret, DEFAULT_FUEL};
    use super::super::parse;
    use super::*;
    use crate::isa::Inputs;

    const NESTED_IF: &str = "@secret A, B, C;\nvar j, k;\nfn main() {\n  if (A || B) {\n    j = j + 1;\n  } else {\n    if (C) {\n      k = k + 1;\n    } else {\n      k = k - 1;\n    }\n  }\n}\n";

    #[test]
    fn nested_if_op_count() {
        let ast = parse(NESTED_IF).unwrap();
        assert_eq!(ast.arith_op_count(), 3);
        let cte = transform_cte(&ast).unwrap();
        assert_eq!(cte.count_ifs(), 0);
        assert_eq!(cte.arith_op_count(), 28);
    }

    #[test]
    fn nested_if_equivalent_over_all_assignments() {
        let ast = parse(NESTED_IF).unwrap();
        let cte = transform_cte(&ast).unwrap();
        for bits in 0..8 {
            for (j, k) in [(0, 0), (5, -3)] {
                let mut inputs: Inputs =
                    ["A", "B", "C"].iter().enumerate().map(|(i, n)| (n.to_string(), vec![(bits >> i) & 1])).collect();
                inputs.insert("j".into(), vec![j]);
                inputs.insert("k".into(), vec![k]);
                assert_eq!(
                    interpret(&ast, &inputs, DEFAULT_FUEL).unwrap(),
                    interpret(&cte, &inputs, DEFAULT_FUEL).unwrap()
                );
            }
        }
    }

    #[test]
    fn single_if_without_else() {
        let ast = parse("@secret s;\nvar x, e;\nfn main() { if (s) { x = e; } }").unwrap();
        let cte = transform_cte(&ast).unwrap();
        let text = cte.to_string();
        assert!(text.contains("x = g1_"), "{text}");
        assert!(text.contains("* e + (1 - g1_"), "{text}");
    }

    #[test]
    fn non_boolean_secrets_are_normalized() {
        let ast = parse("@secret s;\nvar x;\nfn main() { if (s) { x = 10; } else { x = 20; } }").unwrap();
        let cte = transform_cte(&ast).unwrap();
        for s in [-4, 0, 3, 99] {
            let inputs: Inputs = [("s".to_string(), vec![s])].into_iter().collect();
            assert_eq!(interpret(&ast, &inputs, DEFAULT_FUEL), interpret(&cte, &inputs, DEFAULT_FUEL));
        }
    }

    #[test]
    fn rejections() {
        let cases = [
            ("@secret s;\nvar x;\nfn main() { while (s) { s = s - 1; } }", RejectKind::SecretLoop),
            ("@secret s;\nvar x, p;\nfn main() { if (s) { while (p) { p = 0; } } }", RejectKind::SecretLoop),
            ("@secret s;\nvar x;\nfn main() { for i in 0..s { x = x + 1; } }", RejectKind::SecretLoopBound),
            ("@secret s;\nvar a[4];\nfn main() { a[s] = 1; }", RejectKind::SecretIndex),
            ("@secret s;\nvar a[4], x;\nfn main() { x = a[s & 3]; }", RejectKind::SecretIndex),
        ];
        for (src, kind) in cases {
            match transform_cte(&parse(src).unwrap()) {
                Err(CompileError::Rejected { kind: k, .. }) => assert_eq!(k, kind, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn public_for_under_secret_guard_is_kept() {
        let src = "@secret s;\nvar x;\nfn main() { if (s) { for i in 0..4 { x = x + i; } } }";
        let ast = parse(src).unwrap();
        let cte = transform_cte(&ast).unwrap();
        for s in [0, 1] {
            let inputs: Inputs = [("s".to_string(), vec![s])].into_iter().collect();
            assert_eq!(interpret(&ast, &inputs, DEFAULT_FUEL), interpret(&cte, &inputs, DEFAULT_FUEL));
        }
    }
}
