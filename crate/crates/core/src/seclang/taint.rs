//! Secret-taint analysis over the CFG.
//!
//! Explicit flows: a variable assigned from an expression reading a tainted
//! variable becomes tainted. Implicit flows: a variable assigned inside the
//! region of a secret branch becomes tainted, unless the variable is itself
//! declared inside that region (it then cannot outlive the region, and under
//! multi-path execution every instruction of the region runs regardless of
//! the secret). Iterated to a fixpoint; labels only move public to secret.

use std::collections::BTreeSet;

use super::ast::{Ast, NodeId, Stmt, StmtKind, VarId};
use super::cfg::{postdominators, region, BlockId, Cfg};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintState {
    pub tainted: BTreeSet<VarId>,
    /// Branch nodes (`if`, `while`, `for`) whose condition reads a tainted
    /// variable.
    pub secret_branches: BTreeSet<NodeId>,
}

impl TaintState {
    pub fn is_tainted(&self, v: VarId) -> bool {
        self.tainted.contains(&v)
    }

    pub fn is_secret_branch(&self, node: NodeId) -> bool {
        self.secret_branches.contains(&node)
    }
}

fn written_var(s: &Stmt) -> Option<VarId> {
    match &s.kind {
        StmtKind::Let { var, .. } | StmtKind::Assign { var, .. } => Some(*var),
        StmtKind::Store { array, .. } => Some(*array),
        _ => None,
    }
}

fn rhs_reads(s: &Stmt) -> Vec<VarId> {
    match &s.kind {
        StmtKind::Let { init, .. } => init.as_ref().map(|e| e.read_set()).unwrap_or_default(),
        StmtKind::Assign { value, .. } => value.read_set(),
        StmtKind::Store { index, value, .. } => {
            let mut v = index.read_set();
            value.reads(&mut v);
            v
        }
        _ => Vec::new(),
    }
}

pub fn taint(ast: &Ast, cfg: &Cfg) -> TaintState {
    let n = cfg.blocks.len();
    let ipdom = postdominators(cfg);
    let mut decl_block: Vec<Option<BlockId>> = vec![None; ast.vars.len()];
    for (b, block) in cfg.blocks.iter().enumerate() {
        for s in &block.stmts {
            if let StmtKind::Let { var, .. } = s.kind {
                decl_block[var] = Some(b);
            }
        }
    }
    let branches: Vec<(BlockId, NodeId, Vec<VarId>)> =
        cfg.branch_blocks().map(|(b, node, cond)| (b, node, cond.read_set())).collect();
    let regions: Vec<Vec<bool>> = branches.iter().map(|(b, _, _)| region(cfg, &ipdom, *b)).collect();

    let mut tainted: BTreeSet<VarId> = ast.secret_globals().into_iter().collect();
    loop {
        let secret: Vec<usize> = (0..branches.len())
            .filter(|&i| branches[i].2.iter().any(|v| tainted.contains(v)))
            .collect();
        let mut changed = false;
        for b in 0..n {
            let enclosing: Vec<usize> = secret.iter().copied().filter(|&i| regions[i][b]).collect();
            for s in &cfg.blocks[b].stmts {
                let Some(x) = written_var(s) else { continue };
                if tainted.contains(&x) {
                    continue;
                }
                let explicit = rhs_reads(s).iter().any(|v| tainted.contains(v));
                let implicit = enclosing.iter().any(|&i| decl_block[x].is_none_or(|d| !regions[i][d]));
                if explicit || implicit {
                    tainted.insert(x);
                    changed = true;
                }
            }
        }
        if !changed {
            let secret_branches = secret.iter().map(|&i| branches[i].1).collect();
            return TaintState { tainted, secret_branches };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::cfg::lower;
    use super::super::parse;
    use super::*;

    fn analyze(src: &str) -> (Ast, TaintState) {
        let ast = parse(src).unwrap();
        let t = taint(&ast, &lower(&ast));
        (ast, t)
    }

    fn var(ast: &Ast, name: &str) -> VarId {
        ast.vars.vars.iter().position(|v| v.name == name).unwrap()
    }

    #[test]
    fn explicit_flow() {
        let (ast, t) = analyze("@secret a;\nvar o;\nfn main() { let x = a + 1; if (x) { o = 1; } }");
        assert!(t.is_tainted(var(&ast, "x")));
        assert_eq!(t.secret_branches.len(), 1);
    }

    #[test]
    fn implicit_flow() {
        let src = "@secret s;\nvar o;\nfn main() { let y = 0; if (s) { y = 1; } if (y) { o = 1; } }";
        let (ast, t) = analyze(src);
        assert!(t.is_tainted(var(&ast, "y")));
        assert_eq!(t.secret_branches.len(), 2);
    }

    #[test]
    fn public_branch_stays_public() {
        let (_, t) = analyze("@secret s;\nvar p, o;\nfn main() { if (p > 3) { o = s; } }");
        assert!(t.secret_branches.is_empty());
    }

    #[test]
    fn region_local_variables_and_loop_counters_stay_public() {
        let src = "@secret s;\nvar o, p;\nfn main() {\n for it in 0..4 {\n  if (s) {\n   let acc = p;\n   for t in 0..10 { acc = acc + t; }\n   while (acc > 100) { acc = acc - 7; }\n   o = o + acc;\n  }\n }\n}";
        let (ast, t) = analyze(src);
        assert!(!t.is_tainted(var(&ast, "acc")));
        assert!(!t.is_tainted(var(&ast, "t")));
        assert!(!t.is_tainted(var(&ast, "it")));
        assert!(t.is_tainted(var(&ast, "o")));
        assert_eq!(t.secret_branches.len(), 1);
    }

    #[test]
    fn nested_region_taints_outer_local() {
        let src = "@secret s, r;\nvar o;\nfn main() { if (s) { let x = 0; if (r) { x = 1; } while (x) { x = 0; } } }";
        let (ast, t) = analyze(src);
        assert!(t.is_tainted(var(&ast, "x")));
        assert_eq!(t.secret_branches.len(), 3);
    }
}
