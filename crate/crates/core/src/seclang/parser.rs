//! Lexer and recursive-descent parser for SecLang source.

use thiserror::Error;

use super::ast::{BinOp, UnOp};
use super::syntax::{CallExpr, Decl, Function, LValue, Module, Rhs, SExpr, SStmt, SStmtKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

// Longest first so that `<=` wins over `<`.
const PUNCT: [&str; 31] = [
    "..", "||", "&&", "==", "!=", "<=", ">=", "<<", ">>", "@", ";", ",", "(", ")", "{", "}", "[", "]", "=", "<",
    ">", "+", "-", "*", "/", "%", "&", "|", "^", "!", ":",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = &src[start..i];
            let parsed = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                u64::from_str_radix(hex, 16)
            } else {
                text.parse::<u64>()
            };
            let v = parsed.map_err(|_| ParseError {
                line,
                col: start_col,
                message: format!("invalid integer literal `{text}`"),
            })?;
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Int(v as i64), line, col: start_col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), line, col: start_col });
            continue;
        }
        match PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len() as u32;
                out.push(Token { tok: Tok::Punct(p), line, col: start_col });
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError { line, col, message: format!("unexpected character `{ch}`") });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

const KEYWORDS: [&str; 9] = ["var", "fn", "let", "if", "else", "while", "for", "in", "return"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let t = self.peek();
        Err(ParseError { line: t.line, col: t.col, message: message.into() })
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, k: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", Self::describe(&self.peek().tok)))
        }
    }

    fn expect_keyword(&mut self, k: &str) -> Result<(), ParseError> {
        if self.is_keyword(k) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", Self::describe(&self.peek().tok)))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {}", Self::describe(other))),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek().tok {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            ref other => self.err(format!("expected integer, found {}", Self::describe(other))),
        }
    }

    fn array_len(&mut self) -> Result<Option<usize>, ParseError> {
        if !self.eat_punct("[") {
            return Ok(None);
        }
        let n = self.int()?;
        if n <= 0 {
            return self.err("array length must be positive");
        }
        self.expect_punct("]")?;
        Ok(Some(n as usize))
    }

    fn decl_list(&mut self) -> Result<Vec<Decl>, ParseError> {
        let mut out = Vec::new();
        loop {
            let line = self.peek().line;
            let name = self.ident()?;
            let len = self.array_len()?;
            out.push(Decl { name, len, line });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(out)
    }

    fn module(&mut self) -> Result<Module, ParseError> {
        let mut m = Module::default();
        loop {
            if matches!(self.peek().tok, Tok::Eof) {
                return Ok(m);
            }
            if self.eat_punct("@") {
                self.expect_keyword("secret")?;
                m.secrets.extend(self.decl_list()?);
            } else if self.is_keyword("var") {
                self.bump();
                m.globals.extend(self.decl_list()?);
            } else if self.is_keyword("fn") {
                m.functions.push(self.function()?);
            } else {
                return self.err(format!(
                    "expected `@secret`, `var` or `fn`, found {}",
                    Self::describe(&self.peek().tok)
                ));
            }
        }
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        let line = self.peek().line;
        self.expect_keyword("fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                params.push(self.ident()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(Function { name, params, body, line })
    }

    fn block(&mut self) -> Result<Vec<SStmt>, ParseError> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek().tok, Tok::Eof) {
                return self.err("unterminated block");
            }
            out.push(self.stmt()?);
        }
        self.bump();
        Ok(out)
    }

    fn call_args(&mut self) -> Result<Vec<SExpr>, ParseError> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn rhs(&mut self) -> Result<Rhs, ParseError> {
        if let (Tok::Ident(name), Tok::Punct("(")) = (self.peek().tok.clone(), self.peek_at(1)) {
            if !KEYWORDS.contains(&name.as_str()) {
                self.bump();
                let args = self.call_args()?;
                return Ok(Rhs::Call(CallExpr { name, args }));
            }
        }
        Ok(Rhs::Expr(self.expr()?))
    }

    fn stmt(&mut self) -> Result<SStmt, ParseError> {
        let line = self.peek().line;
        let kind = if self.is_keyword("let") {
            self.bump();
            let name = self.ident()?;
            let len = self.array_len()?;
            let init = if len.is_none() && self.eat_punct("=") { Some(self.rhs()?) } else { None };
            self.expect_punct(";")?;
            SStmtKind::Let { name, len, init }
        } else if self.is_keyword("if") {
            self.if_stmt()?
        } else if self.is_keyword("while") {
            self.bump();
            let cond = self.paren_expr()?;
            let body = self.block()?;
            SStmtKind::While { cond, body }
        } else if self.is_keyword("for") {
            self.bump();
            let name = self.ident()?;
            self.expect_keyword("in")?;
            let lo = self.expr()?;
            self.expect_punct("..")?;
            let hi = self.expr()?;
            let body = self.block()?;
            SStmtKind::For { name, lo, hi, body }
        } else if self.is_keyword("return") {
            self.bump();
            let value = if self.is_punct(";") { None } else { Some(self.expr()?) };
            self.expect_punct(";")?;
            SStmtKind::Return(value)
        } else {
            let name = self.ident()?;
            if self.is_punct("(") {
                let args = self.call_args()?;
                self.expect_punct(";")?;
                SStmtKind::Call(CallExpr { name, args })
            } else {
                let target = if self.eat_punct("[") {
                    let idx = self.expr()?;
                    self.expect_punct("]")?;
                    LValue::Index(name, idx)
                } else {
                    LValue::Var(name)
                };
                self.expect_punct("=")?;
                let value = self.rhs()?;
                self.expect_punct(";")?;
                SStmtKind::Assign { target, value }
            }
        };
        Ok(SStmt { kind, line })
    }

    fn if_stmt(&mut self) -> Result<SStmtKind, ParseError> {
        self.expect_keyword("if")?;
        let cond = self.paren_expr()?;
        let then_body = self.block()?;
        let else_body = if self.is_keyword("else") {
            self.bump();
            if self.is_keyword("if") {
                let line = self.peek().line;
                vec![SStmt { kind: self.if_stmt()?, line }]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        Ok(SStmtKind::If { cond, then_body, else_body })
    }

    fn paren_expr(&mut self) -> Result<SExpr, ParseError> {
        self.expect_punct("(")?;
        let e = self.expr()?;
        self.expect_punct(")")?;
        Ok(e)
    }

    fn expr(&mut self) -> Result<SExpr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<SExpr, ParseError> {
        const LEVELS: [&[(&str, BinOp)]; 10] = [
            &[("||", BinOp::LogOr)],
            &[("&&", BinOp::LogAnd)],
            &[("|", BinOp::Or)],
            &[("^", BinOp::Xor)],
            &[("&", BinOp::And)],
            &[("==", BinOp::Eq), ("!=", BinOp::Ne)],
            &[("<=", BinOp::Le), (">=", BinOp::Ge), ("<", BinOp::Lt), (">", BinOp::Gt)],
            &[("<<", BinOp::Shl), (">>", BinOp::Shr)],
            &[("+", BinOp::Add), ("-", BinOp::Sub)],
            &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Rem)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let op = LEVELS[level].iter().find(|(p, _)| self.is_punct(p)).map(|(_, op)| *op);
            let Some(op) = op else { return Ok(lhs) };
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = SExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<SExpr, ParseError> {
        if self.eat_punct("-") {
            // Fold literals so that `-9223372036854775808` and divisors like `-3` stay constants.
            return Ok(match self.unary()? {
                SExpr::Int(v) => SExpr::Int(v.wrapping_neg()),
                e => SExpr::Unary(UnOp::Neg, Box::new(e)),
            });
        }
        if self.eat_punct("!") {
            return Ok(SExpr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<SExpr, ParseError> {
        match self.peek().tok.clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(SExpr::Int(v))
            }
            Tok::Punct("(") => self.paren_expr(),
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.is_punct("(") {
                    return self.err("calls are only allowed as statements or assignment right-hand sides");
                }
                if self.eat_punct("[") {
                    let idx = self.expr()?;
                    self.expect_punct("]")?;
                    Ok(SExpr::Index(name, Box::new(idx)))
                } else {
                    Ok(SExpr::Var(name))
                }
            }
            other => self.err(format!("expected expression, found {}", Self::describe(&other))),
        }
    }
}

/// Parses SecLang source text into surface syntax.
pub fn parse_module(src: &str) -> Result<Module, ParseError> {
    let toks = lex(src)?;
    Parser { toks, pos: 0 }.module()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let m = parse_module("fn main() { x = 1 + 2 * 3 < 4 || !y; }").unwrap();
        let SStmtKind::Assign { value: Rhs::Expr(e), .. } = &m.functions[0].body[0].kind else { panic!() };
        let SExpr::Binary(BinOp::LogOr, lhs, rhs) = e else { panic!("{e:?}") };
        assert!(matches!(**lhs, SExpr::Binary(BinOp::Lt, _, _)));
        assert!(matches!(**rhs, SExpr::Unary(UnOp::Not, _)));
    }

    #[test]
    fn declarations_and_comments() {
        let src = "// header\n@secret A, B[4];\nvar j, arr[64]; // trailing\nfn main() {}\n";
        let m = parse_module(src).unwrap();
        assert_eq!(m.secrets.len(), 2);
        assert_eq!(m.secrets[1].len, Some(4));
        assert_eq!(m.globals[1], Decl { name: "arr".into(), len: Some(64), line: 3 });
    }

    #[test]
    fn else_if_chain_nests() {
        let m = parse_module("fn main() { if (a) { } else if (b) { x = 1; } else { x = 2; } }").unwrap();
        let SStmtKind::If { else_body, .. } = &m.functions[0].body[0].kind else { panic!() };
        assert!(matches!(else_body[0].kind, SStmtKind::If { .. }));
    }

    #[test]
    fn errors_have_positions() {
        let e = parse_module("fn main() {\n  x = ;\n}").unwrap_err();
        assert_eq!((e.line, e.col), (2, 7));
        let e = parse_module("fn main() { x = 1 $ 2; }").unwrap_err();
        assert!(e.message.contains("unexpected character"));
        let e = parse_module("fn main() { let if = 3; }").unwrap_err();
        assert!(e.message.contains("identifier"));
    }

    #[test]
    fn negative_literals_fold() {
        let m = parse_module("fn main() { x = y / -3; }").unwrap();
        let SStmtKind::Assign { value: Rhs::Expr(SExpr::Binary(_, _, d)), .. } = &m.functions[0].body[0].kind else {
            panic!()
        };
        assert_eq!(**d, SExpr::Int(-3));
    }

    #[test]
    fn calls_and_for() {
        let src = "fn f(a, b) { return a + b; }\nfn main() { let r = f(1, 2); for i in 0..r { g(i); } }";
        let m = parse_module(src).unwrap();
        assert_eq!(m.functions[0].params, vec!["a", "b"]);
        let SStmtKind::Let { init: Some(Rhs::Call(c)), .. } = &m.functions[1].body[0].kind else { panic!() };
        assert_eq!(c.name, "f");
        assert!(matches!(m.functions[1].body[1].kind, SStmtKind::For { .. }));
    }
}
