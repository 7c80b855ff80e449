//! Surface syntax, before name resolution and inlining.

use super::ast::{BinOp, UnOp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decl {
    pub name: String,
    /// `Some(n)` for arrays.
    pub len: Option<usize>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<SStmt>,
    pub line: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Module {
    pub secrets: Vec<Decl>,
    pub globals: Vec<Decl>,
    pub functions: Vec<Function>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExpr {
    Int(i64),
    Var(String),
    Index(String, Box<SExpr>),
    Unary(UnOp, Box<SExpr>),
    Binary(BinOp, Box<SExpr>, Box<SExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallExpr {
    pub name: String,
    pub args: Vec<SExpr>,
}

/// Right-hand side of `let` and assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rhs {
    Expr(SExpr),
    Call(CallExpr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LValue {
    Var(String),
    Index(String, SExpr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SStmt {
    pub kind: SStmtKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SStmtKind {
    Let { name: String, len: Option<usize>, init: Option<Rhs> },
    Assign { target: LValue, value: Rhs },
    If { cond: SExpr, then_body: Vec<SStmt>, else_body: Vec<SStmt> },
    While { cond: SExpr, body: Vec<SStmt> },
    For { name: String, lo: SExpr, hi: SExpr, body: Vec<SStmt> },
    Call(CallExpr),
    Return(Option<SExpr>),
}
