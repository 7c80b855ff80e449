//! Nesting collapse: `if (A) { if (B) { S } }` becomes `if (A && B) { S }`
//! when both conditions are secret, neither `if` has an else arm, and the
//! inner `if` is the only statement of the outer arm. Saves one jbTable
//! entry per collapsed level.

use super::ast::{Ast, BinOp, Expr, Stmt, StmtKind};
use super::taint::TaintState;

fn collapse_body(body: Vec<Stmt>, taint: &TaintState) -> Vec<Stmt> {
    body.into_iter().map(|s| collapse_stmt(s, taint)).collect()
}

fn collapse_stmt(s: Stmt, taint: &TaintState) -> Stmt {
    let line = s.line;
    let kind = match s.kind {
        StmtKind::If { id, cond, then_body, else_body } => {
            let then_body = collapse_body(then_body, taint);
            let else_body = collapse_body(else_body, taint);
            let collapsible = taint.is_secret_branch(id)
                && else_body.is_empty()
                && then_body.len() == 1
                && matches!(
                    &then_body[0].kind,
                    StmtKind::If { id: inner, cond: c, else_body: e, .. }
                        if e.is_empty() && taint.is_secret_branch(*inner) && !c.has_load()
                );
            if collapsible {
                let inner = then_body.into_iter().next().expect("checked length");
                let StmtKind::If { cond: inner_cond, then_body: inner_then, .. } = inner.kind else {
                    unreachable!("checked kind")
                };
                StmtKind::If {
                    id,
                    cond: Expr::bin(BinOp::LogAnd, cond, inner_cond),
                    then_body: inner_then,
                    else_body: Vec::new(),
                }
            } else {
                StmtKind::If { id, cond, then_body, else_body }
            }
        }
        StmtKind::While { id, cond, body } => StmtKind::While { id, cond, body: collapse_body(body, taint) },
        StmtKind::For { id, var, lo, hi, body } => {
            StmtKind::For { id, var, lo, hi, body: collapse_body(body, taint) }
        }
        other => other,
    };
    Stmt { kind, line }
}

pub fn collapse_nesting(ast: &Ast, taint: &TaintState) -> Ast {
    Ast { vars: ast.vars.clone(), body: collapse_body(ast.body.clone(), taint), next_node: ast.next_node }
}

/// Deepest nesting of `if`s whose node satisfies `counts`.
pub fn if_depth(body: &[Stmt], counts: &dyn Fn(usize) -> bool) -> usize {
    body.iter()
        .map(|s| match &s.kind {
            StmtKind::If { id, then_body, else_body, .. } => {
                usize::from(counts(*id)) + if_depth(then_body, counts).max(if_depth(else_body, counts))
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => if_depth(body, counts),
            _ => 0,
        })
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::super::cfg::lower;
    use super::super::interp::{interpret, DEFAULT_FUEL};
    use super::super::parse;
    use super::super::taint::taint;
    use super::*;
    use crate::isa::Inputs;

    fn collapsed(src: &str) -> (Ast, Ast, TaintState) {
        let ast = parse(src).unwrap();
        let t = taint(&ast, &lower(&ast));
        let c = collapse_nesting(&ast, &t);
        (ast, c, t)
    }

    #[test]
    fn two_levels_merge() {
        let (_, c, t) = collapsed("@secret a, b;\nvar x;\nfn main() { if (a) { if (b) { x = 1; } } }");
        assert_eq!(c.count_ifs(), 1);
        let StmtKind::If { cond, .. } = &c.body[0].kind else { panic!() };
        assert!(matches!(cond, Expr::Binary(BinOp::LogAnd, _, _)));
        assert_eq!(if_depth(&c.body, &|n| t.is_secret_branch(n)), 1);
    }

    #[test]
    fn preceding_statement_blocks_merge() {
        let (_, c, _) = collapsed("@secret a, b;\nvar x;\nfn main() { if (a) { x = 2; if (b) { x = 1; } } }");
        assert_eq!(c.count_ifs(), 2);
    }

    #[test]
    fn else_arm_blocks_merge() {
        let (_, c, _) = collapsed("@secret a, b;\nvar x;\nfn main() { if (a) { if (b) { x = 1; } } else { x = 3; } }");
        assert_eq!(c.count_ifs(), 2);
    }

    #[test]
    fn five_level_chain_collapses_and_preserves_semantics() {
        let src = "@secret a, b, c, d, e;\nvar x;\nfn main() { if (a) { if (b) { if (c) { if (d) { if (e) { x = 7; } } } } } }";
        let (orig, c, t) = collapsed(src);
        assert_eq!(if_depth(&orig.body, &|n| t.is_secret_branch(n)), 5);
        assert_eq!(if_depth(&c.body, &|n| t.is_secret_branch(n)), 1);
        for bits in 0..32 {
            let inputs: Inputs = ["a", "b", "c", "d", "e"]
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), vec![(bits >> i) & 1]))
                .collect();
            assert_eq!(
                interpret(&orig, &inputs, DEFAULT_FUEL).unwrap(),
                interpret(&c, &inputs, DEFAULT_FUEL).unwrap()
            );
        }
    }
}
