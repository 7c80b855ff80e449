//! Name resolution, call inlining and the static checks that go with them.

use std::collections::{BTreeMap, HashMap};

use super::ast::{Ast, BinOp, Expr, Stmt, StmtKind, UnOp, VarId, VarInfo, VarKind, VarTable};
use super::syntax::{CallExpr, Decl, Function, LValue, Module, Rhs, SExpr, SStmt, SStmtKind};
use super::{CompileError, RejectKind};

fn semantic(line: u32, message: impl Into<String>) -> CompileError {
    CompileError::Semantic { line, message: message.into() }
}

struct Resolver<'m> {
    functions: BTreeMap<&'m str, &'m Function>,
    globals: HashMap<String, VarId>,
    vars: VarTable,
    next_node: usize,
}

/// Where an inlined callee's return value goes.
enum Dest {
    Discard,
    Assign(VarId),
    Store(VarId, Expr),
    Let(String),
}

impl<'m> Resolver<'m> {
    fn lookup(&self, scopes: &[HashMap<String, VarId>], name: &str) -> Option<VarId> {
        scopes.iter().rev().find_map(|s| s.get(name).copied()).or_else(|| self.globals.get(name).copied())
    }

    fn scalar(&self, scopes: &[HashMap<String, VarId>], name: &str, line: u32) -> Result<VarId, CompileError> {
        let id = self.lookup(scopes, name).ok_or_else(|| semantic(line, format!("undefined variable `{name}`")))?;
        if self.vars.get(id).is_array() {
            return Err(semantic(line, format!("array `{name}` used without an index")));
        }
        Ok(id)
    }

    fn array(&self, scopes: &[HashMap<String, VarId>], name: &str, line: u32) -> Result<VarId, CompileError> {
        let id = self.lookup(scopes, name).ok_or_else(|| semantic(line, format!("undefined variable `{name}`")))?;
        if !self.vars.get(id).is_array() {
            return Err(semantic(line, format!("`{name}` is not an array")));
        }
        Ok(id)
    }

    fn expr(&self, scopes: &[HashMap<String, VarId>], e: &SExpr, line: u32) -> Result<Expr, CompileError> {
        Ok(match e {
            SExpr::Int(v) => Expr::Const(*v),
            SExpr::Var(name) => Expr::Var(self.scalar(scopes, name, line)?),
            SExpr::Index(name, idx) => {
                let a = self.array(scopes, name, line)?;
                Expr::Load(a, Box::new(self.expr(scopes, idx, line)?))
            }
            SExpr::Unary(op, inner) => {
                let inner = self.expr(scopes, inner, line)?;
                match (op, inner.as_const()) {
                    (UnOp::Neg, Some(c)) => Expr::Const(c.wrapping_neg()),
                    (UnOp::Not, Some(c)) => Expr::Const(i64::from(c == 0)),
                    _ => Expr::Unary(*op, Box::new(inner)),
                }
            }
            SExpr::Binary(op, a, b) => {
                let a = self.expr(scopes, a, line)?;
                let b = self.expr(scopes, b, line)?;
                if op.needs_constant_rhs() {
                    let Some(c) = b.as_const() else {
                        return Err(semantic(line, format!("right operand of `{}` must be a constant", op.symbol())));
                    };
                    match op {
                        BinOp::Div | BinOp::Rem if c == 0 => {
                            return Err(semantic(line, "division by constant zero"));
                        }
                        BinOp::Shl | BinOp::Shr if !(0..64).contains(&c) => {
                            return Err(semantic(line, "shift amount must be in 0..64"));
                        }
                        _ => {}
                    }
                }
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => Expr::Const(op.apply(x, y)),
                    _ => Expr::bin(*op, a, b),
                }
            }
        })
    }

    fn declare(
        &mut self,
        scopes: &mut [HashMap<String, VarId>],
        name: &str,
        kind: VarKind,
        for_index: bool,
        line: u32,
    ) -> Result<VarId, CompileError> {
        let scope = scopes.last_mut().expect("at least one scope");
        if scope.contains_key(name) {
            return Err(semantic(line, format!("`{name}` already declared in this scope")));
        }
        let id = self.vars.add(VarInfo {
            name: name.to_string(),
            kind,
            global: false,
            secret: false,
            for_index,
            synthetic: false,
            line,
        });
        scope.insert(name.to_string(), id);
        Ok(id)
    }

    fn node(&mut self) -> usize {
        self.next_node += 1;
        self.next_node - 1
    }

    fn assign_target(
        &self,
        scopes: &[HashMap<String, VarId>],
        target: &LValue,
        line: u32,
    ) -> Result<Dest, CompileError> {
        match target {
            LValue::Var(name) => {
                let id = self.scalar(scopes, name, line)?;
                if self.vars.get(id).for_index {
                    return Err(semantic(line, format!("loop index `{name}` cannot be assigned")));
                }
                Ok(Dest::Assign(id))
            }
            LValue::Index(name, idx) => {
                let a = self.array(scopes, name, line)?;
                Ok(Dest::Store(a, self.expr(scopes, idx, line)?))
            }
        }
    }

    fn body(
        &mut self,
        stmts: &[SStmt],
        scopes: &mut Vec<HashMap<String, VarId>>,
        out: &mut Vec<Stmt>,
        top_of_function: bool,
    ) -> Result<Option<Expr>, CompileError> {
        let mut ret = None;
        for (i, s) in stmts.iter().enumerate() {
            let line = s.line;
            match &s.kind {
                SStmtKind::Return(value) => {
                    if !(top_of_function && i + 1 == stmts.len()) {
                        return Err(semantic(line, "`return` must be the last statement of a function"));
                    }
                    ret = match value {
                        Some(e) => Some(self.expr(scopes, e, line)?),
                        None => None,
                    };
                }
                SStmtKind::Let { name, len: Some(n), .. } => {
                    let var = self.declare(scopes, name, VarKind::Array(*n), false, line)?;
                    out.push(Stmt::new(StmtKind::Let { var, init: None }, line));
                }
                SStmtKind::Let { name, len: None, init } => match init {
                    None => {
                        let var = self.declare(scopes, name, VarKind::Scalar, false, line)?;
                        out.push(Stmt::new(StmtKind::Let { var, init: None }, line));
                    }
                    Some(Rhs::Expr(e)) => {
                        let init = self.expr(scopes, e, line)?;
                        let var = self.declare(scopes, name, VarKind::Scalar, false, line)?;
                        out.push(Stmt::new(StmtKind::Let { var, init: Some(init) }, line));
                    }
                    Some(Rhs::Call(call)) => {
                        self.inline_call(call, scopes, out, Dest::Let(name.clone()), line)?;
                    }
                },
                SStmtKind::Assign { target, value } => {
                    let dest = self.assign_target(scopes, target, line)?;
                    match value {
                        Rhs::Expr(e) => {
                            let value = self.expr(scopes, e, line)?;
                            out.push(Self::emit_dest(dest, value, line));
                        }
                        Rhs::Call(call) => self.inline_call(call, scopes, out, dest, line)?,
                    }
                }
                SStmtKind::Call(call) => self.inline_call(call, scopes, out, Dest::Discard, line)?,
                SStmtKind::If { cond, then_body, else_body } => {
                    let cond = self.expr(scopes, cond, line)?;
                    let id = self.node();
                    let then_body = self.scoped(then_body, scopes)?;
                    let else_body = self.scoped(else_body, scopes)?;
                    out.push(Stmt::new(StmtKind::If { id, cond, then_body, else_body }, line));
                }
                SStmtKind::While { cond, body } => {
                    let cond = self.expr(scopes, cond, line)?;
                    let id = self.node();
                    let body = self.scoped(body, scopes)?;
                    out.push(Stmt::new(StmtKind::While { id, cond, body }, line));
                }
                SStmtKind::For { name, lo, hi, body } => {
                    let lo = self.expr(scopes, lo, line)?;
                    let id = self.node();
                    scopes.push(HashMap::new());
                    let var = self.declare(scopes, name, VarKind::Scalar, true, line)?;
                    let hi = self.expr(scopes, hi, line);
                    let body = hi.and_then(|hi| Ok((hi, self.scoped(body, scopes)?)));
                    scopes.pop();
                    let (hi, body) = body?;
                    out.push(Stmt::new(StmtKind::For { id, var, lo, hi, body }, line));
                }
            }
        }
        Ok(ret)
    }

    fn emit_dest(dest: Dest, value: Expr, line: u32) -> Stmt {
        match dest {
            Dest::Assign(var) => Stmt::new(StmtKind::Assign { var, value }, line),
            Dest::Store(array, index) => Stmt::new(StmtKind::Store { array, index, value }, line),
            Dest::Discard | Dest::Let(_) => unreachable!("handled by the caller"),
        }
    }

    fn scoped(&mut self, stmts: &[SStmt], scopes: &mut Vec<HashMap<String, VarId>>) -> Result<Vec<Stmt>, CompileError> {
        scopes.push(HashMap::new());
        let mut out = Vec::new();
        let r = self.body(stmts, scopes, &mut out, false);
        scopes.pop();
        r.map(|_| out)
    }

    fn inline_call(
        &mut self,
        call: &CallExpr,
        scopes: &mut [HashMap<String, VarId>],
        out: &mut Vec<Stmt>,
        dest: Dest,
        line: u32,
    ) -> Result<(), CompileError> {
        let f = *self
            .functions
            .get(call.name.as_str())
            .ok_or_else(|| semantic(line, format!("undefined function `{}`", call.name)))?;
        if f.name == "main" {
            return Err(CompileError::Rejected {
                kind: RejectKind::Recursion,
                line,
                message: "`main` cannot be called".into(),
            });
        }
        if f.params.len() != call.args.len() {
            return Err(semantic(
                line,
                format!("`{}` takes {} argument(s), got {}", f.name, f.params.len(), call.args.len()),
            ));
        }
        let args = call.args.iter().map(|a| self.expr(scopes, a, line)).collect::<Result<Vec<_>, _>>()?;
        let mut callee_scopes = vec![HashMap::new()];
        for (p, a) in f.params.iter().zip(args) {
            let var = self.declare(&mut callee_scopes, p, VarKind::Scalar, false, f.line)?;
            out.push(Stmt::new(StmtKind::Let { var, init: Some(a) }, line));
        }
        let ret = self.body(&f.body, &mut callee_scopes, out, true)?;
        match dest {
            Dest::Discard => {}
            dest => {
                let value = ret.ok_or_else(|| semantic(line, format!("`{}` does not return a value", f.name)))?;
                match dest {
                    Dest::Let(name) => {
                        let var = self.declare(scopes, &name, VarKind::Scalar, false, line)?;
                        out.push(Stmt::new(StmtKind::Let { var, init: Some(value) }, line));
                    }
                    dest => out.push(Self::emit_dest(dest, value, line)),
                }
            }
        }
        Ok(())
    }
}

fn calls_in(stmts: &[SStmt], out: &mut Vec<(String, u32)>) {
    for s in stmts {
        match &s.kind {
            SStmtKind::Call(c) => out.push((c.name.clone(), s.line)),
            SStmtKind::Let { init: Some(Rhs::Call(c)), .. } | SStmtKind::Assign { value: Rhs::Call(c), .. } => {
                out.push((c.name.clone(), s.line))
            }
            SStmtKind::If { then_body, else_body, .. } => {
                calls_in(then_body, out);
                calls_in(else_body, out);
            }
            SStmtKind::While { body, .. } | SStmtKind::For { body, .. } => calls_in(body, out),
            _ => {}
        }
    }
}

/// Rejects any cycle in the call graph, reporting the call that closes it.
fn check_recursion(functions: &BTreeMap<&str, &Function>) -> Result<(), CompileError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        functions: &BTreeMap<&'a str, &'a Function>,
        marks: &mut HashMap<&'a str, Mark>,
    ) -> Result<(), CompileError> {
        marks.insert(name, Mark::Active);
        let mut calls = Vec::new();
        calls_in(&functions[name].body, &mut calls);
        for (callee, line) in calls {
            let Some((&key, _)) = functions.get_key_value(callee.as_str()) else { continue };
            match marks.get(key).copied().unwrap_or(Mark::New) {
                Mark::Active => {
                    return Err(CompileError::Rejected {
                        kind: RejectKind::Recursion,
                        line,
                        message: format!("recursive call to `{callee}`"),
                    })
                }
                Mark::New => visit(key, functions, marks)?,
                Mark::Done => {}
            }
        }
        marks.insert(name, Mark::Done);
        Ok(())
    }
    let mut marks = HashMap::new();
    for &name in functions.keys() {
        if marks.get(name).copied().unwrap_or(Mark::New) == Mark::New {
            visit(name, functions, &mut marks)?;
        }
    }
    Ok(())
}

pub fn resolve(module: &Module) -> Result<Ast, CompileError> {
    let mut functions = BTreeMap::new();
    for f in &module.functions {
        if functions.insert(f.name.as_str(), f).is_some() {
            return Err(semantic(f.line, format!("function `{}` defined twice", f.name)));
        }
    }
    let main = *functions.get("main").ok_or_else(|| semantic(0, "no `fn main()`"))?;
    if !main.params.is_empty() {
        return Err(semantic(main.line, "`main` takes no parameters"));
    }
    check_recursion(&functions)?;

    let mut r = Resolver { functions, globals: HashMap::new(), vars: VarTable::default(), next_node: 0 };
    let decls = module.secrets.iter().map(|d| (d, true)).chain(module.globals.iter().map(|d| (d, false)));
    for (Decl { name, len, line }, secret) in decls {
        if r.globals.contains_key(name) {
            return Err(semantic(*line, format!("global `{name}` declared twice")));
        }
        let kind = len.map_or(VarKind::Scalar, VarKind::Array);
        let id = r.vars.add(VarInfo {
            name: name.clone(),
            kind,
            global: true,
            secret,
            for_index: false,
            synthetic: false,
            line: *line,
        });
        r.globals.insert(name.clone(), id);
    }

    let mut scopes = vec![HashMap::new()];
    let mut body = Vec::new();
    r.body(&main.body, &mut scopes, &mut body, true)?;
    Ok(Ast { vars: r.vars, body, next_node: r.next_node })
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse_module;
    use super::*;

    fn res(src: &str) -> Result<Ast, CompileError> {
        resolve(&parse_module(src).unwrap())
    }

    #[test]
    fn secrets_are_marked() {
        let ast = res("@secret A, B, C;\nvar j, k;\nfn main() { if (A || B) { j = j + 1; } }").unwrap();
        let secrets: Vec<_> = ast.secret_globals().iter().map(|&v| ast.vars.get(v).name.clone()).collect();
        assert_eq!(secrets, vec!["A", "B", "C"]);
        assert!(!ast.vars.get(ast.vars.find_global("j").unwrap()).secret);
    }

    #[test]
    fn empty_main() {
        assert!(res("fn main() {}").unwrap().body.is_empty());
    }

    #[test]
    fn recursion_is_rejected() {
        let err = res("fn f(x) { g(x); }\nfn g(y) {\n f(y); }\nfn main() { f(1); }").unwrap_err();
        assert!(matches!(err, CompileError::Rejected { kind: RejectKind::Recursion, .. }), "{err:?}");
        let err = res("fn main() { main(); }").unwrap_err();
        assert!(matches!(err, CompileError::Rejected { kind: RejectKind::Recursion, .. }));
    }

    #[test]
    fn calls_inline_with_fresh_locals() {
        let src = "var out;\nfn sq(x) { let y = x * x; return y; }\nfn main() { out = sq(3); let z = sq(out); out = z; }";
        let ast = res(src).unwrap();
        // let x; let y; out = y; let x'; let y'; let z = y'; out = z
        assert_eq!(ast.body.len(), 7);
        let ys: Vec<_> = ast.vars.vars.iter().filter(|v| v.name == "y").collect();
        assert_eq!(ys.len(), 2);
    }

    #[test]
    fn semantic_errors() {
        let cases = [
            ("fn main() { x = 1; }", "undefined"),
            ("var a[4];\nfn main() { a = 1; }", "without an index"),
            ("var a;\nfn main() { a[0] = 1; }", "not an array"),
            ("var a;\nfn main() { a = a / 0; }", "zero"),
            ("var a;\nfn main() { a = a % (2 - 2); }", "zero"),
            ("var a, b;\nfn main() { a = a << b; }", "constant"),
            ("var a;\nfn main() { for i in 0..3 { i = 2; } }", "loop index"),
            ("fn f() { return 1; }\nfn main() { let x = f(2); }", "argument"),
            ("fn f() { }\nfn main() { let x = f(); }", "does not return"),
            ("fn f() { return 1; let y = 2; }\nfn main() { f(); }", "last statement"),
            ("fn main() { let x = 1; let x = 2; }", "already declared"),
            ("fn helper() {}", "no `fn main"),
        ];
        for (src, needle) in cases {
            let err = res(src).unwrap_err();
            assert!(err.to_string().contains(needle), "{src}: {err}");
        }
    }

    #[test]
    fn shadowing_in_nested_scope_is_allowed() {
        let ast = res("var o;\nfn main() { let x = 1; if (x) { let x = 2; o = x; } o = o + x; }").unwrap();
        let StmtKind::If { then_body, .. } = &ast.body[1].kind else { panic!() };
        let StmtKind::Assign { value: Expr::Var(inner), .. } = &then_body[1].kind else { panic!() };
        let StmtKind::Let { var: outer, .. } = &ast.body[0].kind else { panic!() };
        assert_ne!(inner, outer);
    }

    #[test]
    fn constants_fold() {
        let ast = res("var o;\nfn main() { o = 2 * 3 + 1; }").unwrap();
        assert_eq!(ast.body[0].kind, StmtKind::Assign { var: 0, value: Expr::Const(7) });
    }
}
