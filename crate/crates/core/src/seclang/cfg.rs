//! Control-flow graph of a resolved program and its postdominator tree.
//!
//! Every `if` gets its own join block, so the immediate postdominator of an
//! `if` branch block is that join.

use super::ast::{Ast, BinOp, Expr, NodeId, Stmt, StmtKind};

pub type BlockId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Taken,
    Fallthrough,
    Jump,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    /// `bz cond`: `then_block` is the fall-through, `else_block` the taken
    /// target.
    Branch { node: NodeId, cond: Expr, then_block: BlockId, else_block: BlockId },
    Jump(BlockId),
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    /// Straight-line statements only: `Let`, `Assign`, `Store`.
    pub stmts: Vec<Stmt>,
    pub term: Terminator,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub exit: BlockId,
}

impl Cfg {
    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        match self.blocks[b].term {
            Terminator::Branch { then_block, else_block, .. } => vec![then_block, else_block],
            Terminator::Jump(t) => vec![t],
            Terminator::Exit => vec![],
        }
    }

    pub fn edges(&self) -> Vec<(BlockId, BlockId, EdgeKind)> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            match block.term {
                Terminator::Branch { then_block, else_block, .. } => {
                    out.push((b, else_block, EdgeKind::Taken));
                    out.push((b, then_block, EdgeKind::Fallthrough));
                }
                Terminator::Jump(t) => out.push((b, t, EdgeKind::Jump)),
                Terminator::Exit => {}
            }
        }
        out
    }

    /// Block holding the branch of `node`.
    pub fn branch_block(&self, node: NodeId) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|b| matches!(b.term, Terminator::Branch { node: n, .. } if n == node))
    }

    pub fn branch_blocks(&self) -> impl Iterator<Item = (BlockId, NodeId, &Expr)> {
        self.blocks.iter().enumerate().filter_map(|(b, block)| match &block.term {
            Terminator::Branch { node, cond, .. } => Some((b, *node, cond)),
            _ => None,
        })
    }

    /// Merges away empty blocks that only jump onward, renumbering the rest
    /// in their original order.
    pub fn simplify(&self) -> Cfg {
        let n = self.blocks.len();
        let forward = |mut b: BlockId| {
            let mut seen = 0;
            while let (true, Terminator::Jump(t)) = (self.blocks[b].stmts.is_empty(), &self.blocks[b].term) {
                if b == self.entry || seen > n {
                    break;
                }
                b = *t;
                seen += 1;
            }
            b
        };
        let keep: Vec<bool> = (0..n)
            .map(|b| {
                b == self.entry
                    || b == self.exit
                    || !(self.blocks[b].stmts.is_empty() && matches!(self.blocks[b].term, Terminator::Jump(_)))
            })
            .collect();
        let mut new_id = vec![usize::MAX; n];
        let mut next = 0;
        for b in 0..n {
            if keep[b] {
                new_id[b] = next;
                next += 1;
            }
        }
        let remap = |t: BlockId| new_id[forward(t)];
        let blocks = (0..n)
            .filter(|&b| keep[b])
            .map(|b| {
                let old = &self.blocks[b];
                let term = match &old.term {
                    Terminator::Branch { node, cond, then_block, else_block } => Terminator::Branch {
                        node: *node,
                        cond: cond.clone(),
                        then_block: remap(*then_block),
                        else_block: remap(*else_block),
                    },
                    Terminator::Jump(t) => Terminator::Jump(remap(*t)),
                    Terminator::Exit => Terminator::Exit,
                };
                BasicBlock { stmts: old.stmts.clone(), term, line: old.line }
            })
            .collect();
        Cfg { blocks, entry: new_id[self.entry], exit: new_id[self.exit] }
    }
}

struct Lowerer {
    blocks: Vec<BasicBlock>,
}

impl Lowerer {
    fn new_block(&mut self, line: u32) -> BlockId {
        self.blocks.push(BasicBlock { stmts: Vec::new(), term: Terminator::Exit, line });
        self.blocks.len() - 1
    }

    /// Lowers `body` starting in block `cur`; returns the block control
    /// falls out of.
    fn lower(&mut self, body: &[Stmt], mut cur: BlockId) -> BlockId {
        for s in body {
            match &s.kind {
                StmtKind::Let { .. } | StmtKind::Assign { .. } | StmtKind::Store { .. } => {
                    self.blocks[cur].stmts.push(s.clone());
                }
                StmtKind::If { id, cond, then_body, else_body } => {
                    let then_block = self.new_block(s.line);
                    let then_end = self.lower(then_body, then_block);
                    let (else_block, else_end) = if else_body.is_empty() {
                        (None, None)
                    } else {
                        let e = self.new_block(s.line);
                        let end = self.lower(else_body, e);
                        (Some(e), Some(end))
                    };
                    let join = self.new_block(s.line);
                    self.blocks[then_end].term = Terminator::Jump(join);
                    if let Some(end) = else_end {
                        self.blocks[end].term = Terminator::Jump(join);
                    }
                    self.blocks[cur].term = Terminator::Branch {
                        node: *id,
                        cond: cond.clone(),
                        then_block,
                        else_block: else_block.unwrap_or(join),
                    };
                    cur = join;
                }
                StmtKind::While { id, cond, body } => {
                    let header = self.new_block(s.line);
                    self.blocks[cur].term = Terminator::Jump(header);
                    let body_block = self.new_block(s.line);
                    let body_end = self.lower(body, body_block);
                    self.blocks[body_end].term = Terminator::Jump(header);
                    let exit = self.new_block(s.line);
                    self.blocks[header].term =
                        Terminator::Branch { node: *id, cond: cond.clone(), then_block: body_block, else_block: exit };
                    cur = exit;
                }
                StmtKind::For { id, var, lo, hi, body } => {
                    self.blocks[cur].stmts.push(Stmt::new(StmtKind::Let { var: *var, init: Some(lo.clone()) }, s.line));
                    let header = self.new_block(s.line);
                    self.blocks[cur].term = Terminator::Jump(header);
                    let body_block = self.new_block(s.line);
                    let body_end = self.lower(body, body_block);
                    let step = Expr::bin(BinOp::Add, Expr::Var(*var), Expr::Const(1));
                    self.blocks[body_end].stmts.push(Stmt::new(StmtKind::Assign { var: *var, value: step }, s.line));
                    self.blocks[body_end].term = Terminator::Jump(header);
                    let exit = self.new_block(s.line);
                    let cond = Expr::bin(BinOp::Lt, Expr::Var(*var), hi.clone());
                    self.blocks[header].term =
                        Terminator::Branch { node: *id, cond, then_block: body_block, else_block: exit };
                    cur = exit;
                }
            }
        }
        cur
    }
}

/// Lowers structured control flow to basic blocks. The last block is the
/// unique exit.
pub fn lower(ast: &Ast) -> Cfg {
    let mut l = Lowerer { blocks: Vec::new() };
    let entry = l.new_block(ast.body.first().map_or(0, |s| s.line));
    let end = l.lower(&ast.body, entry);
    l.blocks[end].term = Terminator::Exit;
    Cfg { blocks: l.blocks, entry, exit: end }
}

/// Immediate postdominator of every block (`None` for the exit and for
/// blocks that cannot reach it).
pub fn postdominators(cfg: &Cfg) -> Vec<Option<BlockId>> {
    let n = cfg.blocks.len();
    let words = n.div_ceil(64);
    let full = {
        let mut v = vec![u64::MAX; words];
        if !n.is_multiple_of(64) {
            v[words - 1] = (1u64 << (n % 64)) - 1;
        }
        v
    };
    let mut pdom: Vec<Vec<u64>> = vec![full.clone(); n];
    pdom[cfg.exit] = vec![0; words];
    pdom[cfg.exit][cfg.exit / 64] |= 1 << (cfg.exit % 64);
    let succs: Vec<Vec<BlockId>> = (0..n).map(|b| cfg.successors(b)).collect();

    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..n).rev() {
            if b == cfg.exit {
                continue;
            }
            let mut set = if succs[b].is_empty() { vec![0; words] } else { full.clone() };
            for &s in &succs[b] {
                for (w, x) in set.iter_mut().zip(&pdom[s]) {
                    *w &= x;
                }
            }
            set[b / 64] |= 1 << (b % 64);
            if set != pdom[b] {
                pdom[b] = set;
                changed = true;
            }
        }
    }

    let count = |s: &Vec<u64>| s.iter().map(|w| w.count_ones()).sum::<u32>();
    let contains = |s: &Vec<u64>, x: usize| s[x / 64] & (1 << (x % 64)) != 0;
    (0..n)
        .map(|b| {
            if b == cfg.exit || !contains(&pdom[b], cfg.exit) {
                return None;
            }
            let own = count(&pdom[b]);
            (0..n).find(|&d| d != b && contains(&pdom[b], d) && count(&pdom[d]) + 1 == own)
        })
        .collect()
}

/// Blocks reachable from the successors of `branch` without passing
/// through its immediate postdominator.
pub fn region(cfg: &Cfg, ipdom: &[Option<BlockId>], branch: BlockId) -> Vec<bool> {
    let stop = ipdom[branch];
    let mut seen = vec![false; cfg.blocks.len()];
    let mut stack = cfg.successors(branch);
    while let Some(b) = stack.pop() {
        if Some(b) == stop || seen[b] {
            continue;
        }
        seen[b] = true;
        stack.extend(cfg.successors(b));
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn if_else_is_a_diamond() {
        let ast = parse("@secret s;\nvar x;\nfn main() { if (s) { x = 1; } else { x = 2; } }").unwrap();
        let cfg = lower(&ast);
        assert_eq!(cfg.blocks.len(), 4);
        let ip = postdominators(&cfg);
        assert_eq!(ip[cfg.entry], Some(cfg.exit));
        assert_eq!(cfg.exit, 3);
        let kinds: Vec<_> = cfg.edges().iter().map(|e| e.2).collect();
        assert_eq!(kinds.iter().filter(|k| **k == EdgeKind::Jump).count(), 2);
    }

    #[test]
    fn while_has_back_edge() {
        let ast = parse("var x;\nfn main() { while (x < 3) { x = x + 1; } }").unwrap();
        let cfg = lower(&ast);
        // entry, header, body, exit
        assert_eq!(cfg.blocks.len(), 4);
        assert!(cfg.edges().contains(&(2, 1, EdgeKind::Jump)));
        let ip = postdominators(&cfg);
        assert_eq!(ip[1], Some(3));
        assert_eq!(ip[2], Some(1));
    }

    #[test]
    fn straight_line_ipdom_is_successor() {
        let cfg = Cfg {
            blocks: vec![
                BasicBlock { stmts: vec![], term: Terminator::Jump(1), line: 0 },
                BasicBlock { stmts: vec![], term: Terminator::Jump(2), line: 0 },
                BasicBlock { stmts: vec![], term: Terminator::Exit, line: 0 },
            ],
            entry: 0,
            exit: 2,
        };
        assert_eq!(postdominators(&cfg), vec![Some(1), Some(2), None]);
    }

    #[test]
    fn region_excludes_join() {
        let ast = parse("@secret s;\nvar x;\nfn main() { if (s) { x = 1; } x = 3; }").unwrap();
        let cfg = lower(&ast);
        let ip = postdominators(&cfg);
        let r = region(&cfg, &ip, cfg.entry);
        let inside: Vec<_> = (0..cfg.blocks.len()).filter(|&b| r[b]).collect();
        assert_eq!(inside, vec![1]);
    }

    /// Seven blocks: BB1 (secret) splits into BB2 (public branch to BB4 /
    /// BB5) and BB3 (secret, guarding BB6); everything joins at BB7.
    #[test]
    fn nested_and_sequential_branches_match_hand_built_graph() {
        let src = "@secret s1, s2;\nvar p, x, y, z, w;\nfn main() {\n if (s1) { if (p) { x = 1; } else { x = 2; } } else { y = 1; if (s2) { z = 1; } }\n w = 0;\n}";
        let ast = parse(src).unwrap();
        let cfg = lower(&ast).simplify();
        assert_eq!(cfg.blocks.len(), 7);

        let branch = |b: BlockId| match cfg.blocks[b].term {
            Terminator::Branch { then_block, else_block, .. } => (then_block, else_block),
            ref t => panic!("block {b} ends in {t:?}"),
        };
        let bb1 = cfg.entry;
        let (bb2, bb3) = branch(bb1);
        let (bb4, bb5) = branch(bb2);
        let (bb6, bb7) = branch(bb3);
        // hand-built numbering BB1..BB7 -> ours
        let ours = [bb1, bb2, bb3, bb4, bb5, bb6, bb7];
        let mut seen = ours.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 7);
        assert_eq!(cfg.exit, bb7);

        let hand: Vec<(usize, usize)> = vec![(1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7), (4, 7), (5, 7), (6, 7)];
        let mut got: Vec<(usize, usize)> = cfg
            .edges()
            .iter()
            .map(|&(a, b, _)| {
                let idx = |x| ours.iter().position(|&o| o == x).unwrap() + 1;
                (idx(a), idx(b))
            })
            .collect();
        got.sort_unstable();
        assert_eq!(got, hand);

        let ip = postdominators(&cfg);
        assert_eq!(ip[bb1], Some(bb7));
        assert_eq!(ip[bb3], Some(bb7));
        assert_eq!(ip[bb2], Some(bb7));
    }
}
