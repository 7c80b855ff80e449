//! Resolved program: one flat body (callees inlined) over uniquely numbered
//! variables.

use std::fmt::{self, Write as _};

pub type VarId = usize;
/// Identifies an `if`, `while` or `for` statement.
pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Constant divisor only.
    Div,
    /// Constant divisor only.
    Rem,
    And,
    Or,
    Xor,
    /// Constant amount only.
    Shl,
    /// Constant amount only; logical.
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LogAnd,
    LogOr,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::LogAnd => "&&",
            BinOp::LogOr => "||",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    /// Whether the right operand must be a constant.
    pub fn needs_constant_rhs(self) -> bool {
        matches!(self, BinOp::Div | BinOp::Rem | BinOp::Shl | BinOp::Shr)
    }

    /// Wrapping 64-bit semantics shared by the interpreter and the machine.
    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => a.wrapping_div(b),
            BinOp::Rem => a.wrapping_sub(a.wrapping_div(b).wrapping_mul(b)),
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => ((a as u64) << (b & 63)) as i64,
            BinOp::Shr => ((a as u64) >> (b & 63)) as i64,
            BinOp::Eq => i64::from(a == b),
            BinOp::Ne => i64::from(a != b),
            BinOp::Lt => i64::from(a < b),
            BinOp::Le => i64::from(a <= b),
            BinOp::Gt => i64::from(a > b),
            BinOp::Ge => i64::from(a >= b),
            BinOp::LogAnd => i64::from(a != 0 && b != 0),
            BinOp::LogOr => i64::from(a != 0 || b != 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Scalar,
    Array(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub global: bool,
    pub secret: bool,
    /// Loop index of a `for`; never assigned by user code.
    pub for_index: bool,
    /// Introduced by a compiler pass rather than the source.
    pub synthetic: bool,
    pub line: u32,
}

#[allow(clippy::len_without_is_empty)]
impl VarInfo {
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Scalar => 1,
            VarKind::Array(n) => n,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self.kind, VarKind::Array(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarTable {
    pub vars: Vec<VarInfo>,
}

impl VarTable {
    pub fn add(&mut self, info: VarInfo) -> VarId {
        self.vars.push(info);
        self.vars.len() - 1
    }

    pub fn get(&self, id: VarId) -> &VarInfo {
        &self.vars[id]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Globals in declaration order (secrets first).
    pub fn globals(&self) -> impl Iterator<Item = (VarId, &VarInfo)> {
        self.vars.iter().enumerate().filter(|(_, v)| v.global)
    }

    pub fn find_global(&self, name: &str) -> Option<VarId> {
        self.globals().find(|(_, v)| v.name == name).map(|(id, _)| id)
    }

    /// Unique printable name.
    pub fn display_name(&self, id: VarId) -> String {
        let v = &self.vars[id];
        if v.global {
            v.name.clone()
        } else {
            format!("{}_{id}", v.name)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(i64),
    Var(VarId),
    Load(VarId, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Variables read, including arrays loaded from.
    pub fn reads(&self, out: &mut Vec<VarId>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Load(a, i) => {
                out.push(*a);
                i.reads(out);
            }
            Expr::Unary(_, e) => e.reads(out),
            Expr::Binary(_, a, b) => {
                a.reads(out);
                b.reads(out);
            }
        }
    }

    pub fn read_set(&self) -> Vec<VarId> {
        let mut v = Vec::new();
        self.reads(&mut v);
        v
    }

    pub fn reads_any(&self, pred: &dyn Fn(VarId) -> bool) -> bool {
        self.read_set().into_iter().any(pred)
    }

    /// Index expressions of every array load.
    pub fn load_indices<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Load(_, i) => {
                out.push(i);
                i.load_indices(out);
            }
            Expr::Unary(_, e) => e.load_indices(out),
            Expr::Binary(_, a, b) => {
                a.load_indices(out);
                b.load_indices(out);
            }
        }
    }

    pub fn has_load(&self) -> bool {
        let mut v = Vec::new();
        self.load_indices(&mut v);
        !v.is_empty()
    }

    /// Additions, subtractions and multiplications.
    pub fn arith_ops(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 0,
            Expr::Load(_, i) => i.arith_ops(),
            Expr::Unary(UnOp::Neg, e) => 1 + e.arith_ops(),
            Expr::Unary(UnOp::Not, e) => e.arith_ops(),
            Expr::Binary(op, a, b) => {
                let own = usize::from(matches!(op, BinOp::Add | BinOp::Sub | BinOp::Mul));
                own + a.arith_ops() + b.arith_ops()
            }
        }
    }

    pub fn as_const(&self) -> Option<i64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    /// Scalars start at `init` (0 when absent); arrays are zero-filled.
    Let { var: VarId, init: Option<Expr> },
    Assign { var: VarId, value: Expr },
    Store { array: VarId, index: Expr, value: Expr },
    If { id: NodeId, cond: Expr, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
    While { id: NodeId, cond: Expr, body: Vec<Stmt> },
    /// `var` runs from `lo` while `var < hi`, with `hi` re-evaluated each
    /// iteration.
    For { id: NodeId, var: VarId, lo: Expr, hi: Expr, body: Vec<Stmt> },
}

impl Stmt {
    pub fn new(kind: StmtKind, line: u32) -> Self {
        Self { kind, line }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    pub vars: VarTable,
    pub body: Vec<Stmt>,
    /// Next unused [`NodeId`].
    pub next_node: NodeId,
}

impl Ast {
    pub fn fresh_node(&mut self) -> NodeId {
        self.next_node += 1;
        self.next_node - 1
    }

    pub fn secret_globals(&self) -> Vec<VarId> {
        self.vars.globals().filter(|(_, v)| v.secret).map(|(id, _)| id).collect()
    }

    /// Additions, subtractions and multiplications in all statements.
    pub fn arith_op_count(&self) -> usize {
        fn walk(body: &[Stmt]) -> usize {
            body.iter()
                .map(|s| match &s.kind {
                    StmtKind::Let { init, .. } => init.as_ref().map_or(0, Expr::arith_ops),
                    StmtKind::Assign { value, .. } => value.arith_ops(),
                    StmtKind::Store { index, value, .. } => index.arith_ops() + value.arith_ops(),
                    StmtKind::If { cond, then_body, else_body, .. } => {
                        cond.arith_ops() + walk(then_body) + walk(else_body)
                    }
                    StmtKind::While { cond, body, .. } => cond.arith_ops() + walk(body),
                    StmtKind::For { lo, hi, body, .. } => lo.arith_ops() + hi.arith_ops() + walk(body),
                })
                .sum()
        }
        walk(&self.body)
    }

    pub fn count_ifs(&self) -> usize {
        fn walk(body: &[Stmt]) -> usize {
            body.iter()
                .map(|s| match &s.kind {
                    StmtKind::If { then_body, else_body, .. } => 1 + walk(then_body) + walk(else_body),
                    StmtKind::While { body, .. } | StmtKind::For { body, .. } => walk(body),
                    _ => 0,
                })
                .sum()
        }
        walk(&self.body)
    }

    pub fn expr_to_string(&self, e: &Expr) -> String {
        let mut s = String::new();
        self.write_expr(&mut s, e, 0);
        s
    }

    fn write_expr(&self, out: &mut String, e: &Expr, parent_prec: u8) {
        fn prec(op: BinOp) -> u8 {
            match op {
                BinOp::LogOr => 1,
                BinOp::LogAnd => 2,
                BinOp::Or => 3,
                BinOp::Xor => 4,
                BinOp::And => 5,
                BinOp::Eq | BinOp::Ne => 6,
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 7,
                BinOp::Shl | BinOp::Shr => 8,
                BinOp::Add | BinOp::Sub => 9,
                BinOp::Mul | BinOp::Div | BinOp::Rem => 10,
            }
        }
        match e {
            Expr::Const(c) if *c < 0 => {
                let _ = write!(out, "({c})");
            }
            Expr::Const(c) => {
                let _ = write!(out, "{c}");
            }
            Expr::Var(v) => out.push_str(&self.vars.display_name(*v)),
            Expr::Load(a, i) => {
                out.push_str(&self.vars.display_name(*a));
                out.push('[');
                self.write_expr(out, i, 0);
                out.push(']');
            }
            Expr::Unary(op, inner) => {
                out.push(if *op == UnOp::Neg { '-' } else { '!' });
                self.write_expr(out, inner, 11);
            }
            Expr::Binary(op, a, b) => {
                let p = prec(*op);
                if p < parent_prec {
                    out.push('(');
                }
                self.write_expr(out, a, p);
                let _ = write!(out, " {} ", op.symbol());
                self.write_expr(out, b, p + 1);
                if p < parent_prec {
                    out.push(')');
                }
            }
        }
    }

    fn write_body(&self, out: &mut String, body: &[Stmt], depth: usize) {
        let pad = "    ".repeat(depth);
        for s in body {
            match &s.kind {
                StmtKind::Let { var, init } => {
                    let v = self.vars.get(*var);
                    let name = self.vars.display_name(*var);
                    match (v.kind, init) {
                        (VarKind::Array(n), _) => {
                            let _ = writeln!(out, "{pad}let {name}[{n}];");
                        }
                        (_, Some(e)) => {
                            let _ = writeln!(out, "{pad}let {name} = {};", self.expr_to_string(e));
                        }
                        (_, None) => {
                            let _ = writeln!(out, "{pad}let {name};");
                        }
                    }
                }
                StmtKind::Assign { var, value } => {
                    let _ = writeln!(out, "{pad}{} = {};", self.vars.display_name(*var), self.expr_to_string(value));
                }
                StmtKind::Store { array, index, value } => {
                    let _ = writeln!(
                        out,
                        "{pad}{}[{}] = {};",
                        self.vars.display_name(*array),
                        self.expr_to_string(index),
                        self.expr_to_string(value)
                    );
                }
                StmtKind::If { cond, then_body, else_body, .. } => {
                    let _ = writeln!(out, "{pad}if ({}) {{", self.expr_to_string(cond));
                    self.write_body(out, then_body, depth + 1);
                    if else_body.is_empty() {
                        let _ = writeln!(out, "{pad}}}");
                    } else {
                        let _ = writeln!(out, "{pad}}} else {{");
                        self.write_body(out, else_body, depth + 1);
                        let _ = writeln!(out, "{pad}}}");
                    }
                }
                StmtKind::While { cond, body, .. } => {
                    let _ = writeln!(out, "{pad}while ({}) {{", self.expr_to_string(cond));
                    self.write_body(out, body, depth + 1);
                    let _ = writeln!(out, "{pad}}}");
                }
                StmtKind::For { var, lo, hi, body, .. } => {
                    let _ = writeln!(
                        out,
                        "{pad}for {} in {}..{} {{",
                        self.vars.display_name(*var),
                        self.expr_to_string(lo),
                        self.expr_to_string(hi)
                    );
                    self.write_body(out, body, depth + 1);
                    let _ = writeln!(out, "{pad}}}");
                }
            }
        }
    }
}

/// Prints the resolved program as SecLang text (inlined, with locals
/// suffixed by their id). Meant for inspection.
impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let decl = |v: &VarInfo| match v.kind {
            VarKind::Scalar => v.name.clone(),
            VarKind::Array(n) => format!("{}[{n}]", v.name),
        };
        let secrets: Vec<_> = self.vars.globals().filter(|(_, v)| v.secret).map(|(_, v)| decl(v)).collect();
        let publics: Vec<_> = self.vars.globals().filter(|(_, v)| !v.secret).map(|(_, v)| decl(v)).collect();
        if !secrets.is_empty() {
            let _ = writeln!(out, "@secret {};", secrets.join(", "));
        }
        if !publics.is_empty() {
            let _ = writeln!(out, "var {};", publics.join(", "));
        }
        out.push_str("fn main() {\n");
        self.write_body(&mut out, &self.body, 1);
        out.push_str("}\n");
        f.write_str(&out)
    }
}
