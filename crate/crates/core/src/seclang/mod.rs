//! SecLang: a small imperative language with `@secret` globals, and its
//! compiler.
//!
//! ```text
//! @secret key, bits[4];
//! var out, table[16];
//!
//! fn step(x) { return x * 3 + 1; }
//!
//! fn main() {
//!     for i in 0..16 { table[i] = step(i); }
//!     if (key > 3) { out = table[5]; } else { out = 0; }
//! }
//! ```
//!
//! Values are wrapping 64-bit integers. `/`, `%`, `<<` and `>>` need a
//! constant right operand; `&&` and `||` evaluate both sides. Functions are
//! inlined at each call, so recursion is rejected. `return` may only be the
//! last statement of a function.

pub mod ast;
pub mod cfg;
pub mod codegen;
pub mod collapse;
pub mod cte;
pub mod interp;
pub mod parser;
pub mod resolve;
pub mod syntax;
pub mod taint;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::isa::{DataLayout, Program, DEFAULT_REGISTERS};
use ast::Ast;
use codegen::{CodegenOptions, RegionPlan};
use taint::TaintState;

/// The nested-branch example with secrets `A`, `B`, `C`.
pub const NESTED_IF: &str = "\
@secret A, B, C;
var j, k;

fn main() {
    if (A || B) {
        j = j + 1;
    } else {
        if (C) {
            k = k + 1;
        } else {
            k = k - 1;
        }
    }
}
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectKind {
    Recursion,
    /// A loop whose trip count depends on a secret.
    SecretLoop,
    /// A `for` bound that depends on a secret (CTE).
    SecretLoopBound,
    /// A memory address computed from a secret.
    SecretIndex,
    /// More nested secure regions than jbTable entries.
    NestingTooDeep,
}

impl RejectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectKind::Recursion => "recursion",
            RejectKind::SecretLoop => "secret_loop",
            RejectKind::SecretLoopBound => "secret_loop_bound",
            RejectKind::SecretIndex => "secret_index",
            RejectKind::NestingTooDeep => "nesting_too_deep",
        }
    }
}

impl fmt::Display for RejectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: u32, col: u32, message: String },
    #[error("line {line}: {message}")]
    Semantic { line: u32, message: String },
    #[error("line {line}: rejected ({kind}): {message}")]
    Rejected { kind: RejectKind, line: u32, message: String },
    #[error("line {line}: expression needs more than the available temporary registers")]
    RegisterPressure { line: u32 },
}

impl From<parser::ParseError> for CompileError {
    fn from(e: parser::ParseError) -> Self {
        CompileError::Syntax { line: e.line, col: e.col, message: e.message }
    }
}

/// Parses and resolves a source text.
pub fn parse(src: &str) -> Result<Ast, CompileError> {
    resolve::resolve(&parser::parse_module(src)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompileMode {
    /// Ordinary branches everywhere.
    Plain,
    /// Secret branches become secure regions.
    Sempe,
    /// Secret branches are removed by the constant-time-expression transform.
    Cte,
}

impl CompileMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompileMode::Plain => "plain",
            CompileMode::Sempe => "sempe",
            CompileMode::Cte => "cte",
        }
    }
}

impl FromStr for CompileMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(CompileMode::Plain),
            "sempe" => Ok(CompileMode::Sempe),
            "cte" => Ok(CompileMode::Cte),
            other => Err(format!("unknown compile mode `{other}` (expected plain, sempe or cte)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub mode: CompileMode,
    pub register_count: usize,
    pub jb_capacity: usize,
    /// Merge directly nested secret `if`s without else arms (SeMPE only).
    pub collapse: bool,
    /// Keep every local in memory (SeMPE only).
    pub privatize_all: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            mode: CompileMode::Sempe,
            register_count: DEFAULT_REGISTERS,
            jb_capacity: crate::machine::DEFAULT_JB_CAPACITY,
            collapse: false,
            privatize_all: false,
        }
    }
}

impl CompileOptions {
    pub fn with_mode(mode: CompileMode) -> Self {
        Self { mode, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub program: Program,
    pub layout: DataLayout,
    /// The program that was lowered (after collapse or CTE).
    pub ast: Ast,
    pub taint: TaintState,
    pub regions: Vec<RegionPlan>,
}

pub fn compile(src: &str, opts: &CompileOptions) -> Result<CompiledProgram, CompileError> {
    compile_ast(&parse(src)?, opts)
}

pub fn compile_ast(ast: &Ast, opts: &CompileOptions) -> Result<CompiledProgram, CompileError> {
    let analyze = |a: &Ast| taint::taint(a, &cfg::lower(a));
    let t = analyze(ast);
    let (ast, t) = match opts.mode {
        CompileMode::Plain => (ast.clone(), t),
        CompileMode::Sempe if opts.collapse => {
            let c = collapse::collapse_nesting(ast, &t);
            let t = analyze(&c);
            (c, t)
        }
        CompileMode::Sempe => (ast.clone(), t),
        CompileMode::Cte => {
            let c = cte::transform_cte(ast)?;
            let t = analyze(&c);
            (c, t)
        }
    };
    let secure = opts.mode == CompileMode::Sempe;
    let out = codegen::codegen(
        &ast,
        &t,
        CodegenOptions {
            secure,
            register_count: opts.register_count,
            jb_capacity: opts.jb_capacity,
            privatize_all: secure && opts.privatize_all,
        },
    )?;
    Ok(CompiledProgram { program: out.program, layout: out.layout, ast, taint: t, regions: out.regions })
}
