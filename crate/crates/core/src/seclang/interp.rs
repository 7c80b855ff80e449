//! Reference interpreter: the semantic oracle for every lowering.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{Ast, Expr, Stmt, StmtKind, UnOp, VarId};
use crate::isa::Inputs;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("line {line}: index {index} out of bounds for `{name}` (length {len})")]
    IndexOutOfBounds { line: u32, name: String, index: i64, len: usize },
    #[error("step limit exceeded")]
    StepLimit,
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
    #[error("global `{name}` holds {len} word(s), got {given}")]
    WrongLength { name: String, len: usize, given: usize },
}

struct Interp<'a> {
    ast: &'a Ast,
    values: Vec<Vec<i64>>,
    fuel: u64,
}

impl Interp<'_> {
    fn index(&self, array: VarId, index: i64, line: u32) -> Result<usize, InterpError> {
        let len = self.values[array].len();
        usize::try_from(index).ok().filter(|&i| i < len).ok_or_else(|| InterpError::IndexOutOfBounds {
            line,
            name: self.ast.vars.get(array).name.clone(),
            index,
            len,
        })
    }

    fn eval(&self, e: &Expr, line: u32) -> Result<i64, InterpError> {
        Ok(match e {
            Expr::Const(c) => *c,
            Expr::Var(v) => self.values[*v][0],
            Expr::Load(a, i) => {
                let i = self.eval(i, line)?;
                self.values[*a][self.index(*a, i, line)?]
            }
            Expr::Unary(UnOp::Neg, x) => self.eval(x, line)?.wrapping_neg(),
            Expr::Unary(UnOp::Not, x) => i64::from(self.eval(x, line)? == 0),
            Expr::Binary(op, a, b) => op.apply(self.eval(a, line)?, self.eval(b, line)?),
        })
    }

    fn tick(&mut self) -> Result<(), InterpError> {
        if self.fuel == 0 {
            return Err(InterpError::StepLimit);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn exec(&mut self, body: &[Stmt]) -> Result<(), InterpError> {
        for s in body {
            self.tick()?;
            let line = s.line;
            match &s.kind {
                StmtKind::Let { var, init } => {
                    let v = match init {
                        Some(e) => self.eval(e, line)?,
                        None => 0,
                    };
                    self.values[*var].iter_mut().for_each(|w| *w = 0);
                    self.values[*var][0] = v;
                }
                StmtKind::Assign { var, value } => {
                    self.values[*var][0] = self.eval(value, line)?;
                }
                StmtKind::Store { array, index, value } => {
                    let i = self.eval(index, line)?;
                    let v = self.eval(value, line)?;
                    let i = self.index(*array, i, line)?;
                    self.values[*array][i] = v;
                }
                StmtKind::If { cond, then_body, else_body, .. } => {
                    if self.eval(cond, line)? != 0 {
                        self.exec(then_body)?;
                    } else {
                        self.exec(else_body)?;
                    }
                }
                StmtKind::While { cond, body, .. } => {
                    while self.eval(cond, line)? != 0 {
                        self.tick()?;
                        self.exec(body)?;
                    }
                }
                StmtKind::For { var, lo, hi, body, .. } => {
                    self.values[*var][0] = self.eval(lo, line)?;
                    while self.values[*var][0] < self.eval(hi, line)? {
                        self.tick()?;
                        self.exec(body)?;
                        self.values[*var][0] = self.values[*var][0].wrapping_add(1);
                    }
                }
            }
        }
        Ok(())
    }
}

pub const DEFAULT_FUEL: u64 = 100_000_000;

/// Runs `ast` with `inputs` written into its globals (others start at 0)
/// and returns every global's final value.
pub fn interpret(ast: &Ast, inputs: &Inputs, fuel: u64) -> Result<BTreeMap<String, Vec<i64>>, InterpError> {
    let values = ast.vars.vars.iter().map(|v| vec![0; v.len()]).collect();
    let mut it = Interp { ast, values, fuel };
    for (name, given) in inputs {
        let id = ast.vars.find_global(name).ok_or_else(|| InterpError::UnknownGlobal(name.clone()))?;
        let slot = &mut it.values[id];
        if given.len() > slot.len() {
            return Err(InterpError::WrongLength { name: name.clone(), len: slot.len(), given: given.len() });
        }
        slot[..given.len()].copy_from_slice(given);
    }
    it.exec(&ast.body)?;
    Ok(ast.vars.globals().map(|(id, v)| (v.name.clone(), it.values[id].clone())).collect())
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn run(src: &str, inputs: &[(&str, i64)]) -> BTreeMap<String, Vec<i64>> {
        let ast = parse(src).unwrap();
        let inputs = inputs.iter().map(|(n, v)| (n.to_string(), vec![*v])).collect();
        interpret(&ast, &inputs, DEFAULT_FUEL).unwrap()
    }

    #[test]
    fn nested_if_semantics() {
        let src = "@secret A, B, C;\nvar j, k;\nfn main() {\n  if (A || B) { j = j + 1; } else { if (C) { k = k + 1; } else { k = k - 1; } }\n}";
        let out = run(src, &[("A", 0), ("B", 0), ("C", 0)]);
        assert_eq!((out["j"][0], out["k"][0]), (0, -1));
        let out = run(src, &[("A", 0), ("B", 5), ("C", 0)]);
        assert_eq!((out["j"][0], out["k"][0]), (1, 0));
    }

    #[test]
    fn loops_and_arrays() {
        let src = "var s, a[8];\nfn main() { for i in 0..8 { a[i] = i * i; } let k = 0; while (k < 8) { s = s + a[k]; k = k + 1; } }";
        let out = run(src, &[]);
        assert_eq!(out["s"][0], 140);
        assert_eq!(out["a"][3], 9);
    }

    #[test]
    fn operators_match_machine_conventions() {
        let src = "var a, b, c, d, e;\nfn main() { a = -7 / 2; b = -7 % 2; c = -1 >> 60; d = (3 < 4) + (3 == 3) + !5; e = 2 && 0 || 3; }";
        let out = run(src, &[]);
        assert_eq!(out["a"][0], -3);
        assert_eq!(out["b"][0], -1);
        assert_eq!(out["c"][0], 15);
        assert_eq!(out["d"][0], 2);
        assert_eq!(out["e"][0], 1);
    }

    #[test]
    fn out_of_bounds_and_fuel() {
        let ast = parse("var a[2];\nfn main() { a[2] = 1; }").unwrap();
        assert!(matches!(interpret(&ast, &Inputs::new(), 100), Err(InterpError::IndexOutOfBounds { .. })));
        let ast = parse("fn main() { while (1) { } }").unwrap();
        assert_eq!(interpret(&ast, &Inputs::new(), 100), Err(InterpError::StepLimit));
    }
}
