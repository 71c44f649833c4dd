//! Text format for kernels (`.mk`).
//!
//! ```text
//! program := decl* stmt*
//! decl    := "var" IDENT ";"
//! stmt    := IDENT "=" expr ";"
//!          | "if" "(" expr RELOP expr ")" "{" stmt* "}"
//! expr    := INT | "gid" | IDENT | "(" expr BINOP expr ")"
//! BINOP   := "+" | "*" | "^" | "&" | "|"
//! RELOP   := "<" | "<=" | "==" | "!=" | ">="
//! INT     := "-"? [0-9]+          (64-bit, wrapping arithmetic)
//! ```
//!
//! `//` starts a comment that runs to end of line. The printer emits one
//! declaration or statement per line, two-space indentation inside `if`
//! bodies, fully parenthesised binary expressions and a trailing newline;
//! parsing canonical text and printing it again is byte-identical.

use std::fmt::Write as _;

use super::ast::{BinOp, Cond, Expr, Program, RelOp, Stmt};
use crate::error::{Error, Result};

pub fn print(program: &Program) -> String {
    let mut out = String::new();
    for v in &program.declared_vars {
        let _ = writeln!(out, "var {v};");
    }
    print_block(&program.statements, 0, &mut out);
    out
}

fn print_block(stmts: &[Stmt], depth: usize, out: &mut String) {
    for s in stmts {
        for _ in 0..depth {
            out.push_str("  ");
        }
        match s {
            Stmt::Assign(v, e) => {
                let _ = writeln!(out, "{v} = {};", expr_text(e));
            }
            Stmt::If(c, body) => {
                let _ = writeln!(out, "if ({}) {{", cond_text(c));
                print_block(body, depth + 1, out);
                for _ in 0..depth {
                    out.push_str("  ");
                }
                out.push_str("}\n");
            }
        }
    }
}

pub fn expr_text(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(e, &mut s);
    s
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Lit(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Gid => out.push_str("gid"),
        Expr::Var(v) => out.push_str(v),
        Expr::Bin(op, a, b) => {
            out.push('(');
            write_expr(a, out);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(b, out);
            out.push(')');
        }
    }
}

pub fn cond_text(c: &Cond) -> String {
    format!("{} {} {}", expr_text(&c.lhs), c.op.symbol(), expr_text(&c.rhs))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

const SYMBOLS: [&str; 15] = [
    "<=", "==", "!=", ">=", "<", "=", "+", "*", "^", "&", "|", "(", ")", "{", "}",
];

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
        };
        let mut out = Vec::new();
        while let Some(t) = lx.next_tok()? {
            out.push((t, lx.line));
        }
        Ok(out)
    }

    fn next_tok(&mut self) -> Result<Option<Tok>> {
        loop {
            match self.src.get(self.pos) {
                None => return Ok(None),
                Some(b'\n') => {
                    self.line += 1;
                    self.pos += 1;
                }
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
            }
        }
        let rest = &self.src[self.pos..];
        let c = rest[0];
        if c == b';' {
            self.pos += 1;
            return Ok(Some(Tok::Sym(";")));
        }
        if c.is_ascii_digit() || (c == b'-' && rest.get(1).is_some_and(u8::is_ascii_digit)) {
            let start = self.pos;
            self.pos += 1;
            while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let v = text
                .parse::<i64>()
                .map_err(|_| self.error(&format!("integer literal {text} out of range")))?;
            return Ok(Some(Tok::Int(v)));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self
                .src
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
            {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            return Ok(Some(Tok::Ident(text.to_owned())));
        }
        for sym in SYMBOLS {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                return Ok(Some(Tok::Sym(sym)));
            }
        }
        Err(self.error(&format!("unexpected character {:?}", c as char)))
    }

    fn error(&self, msg: &str) -> Error {
        Error::SchemaViolation(format!("line {}: {msg}", self.line))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

pub fn parse(src: &str) -> Result<Program> {
    let mut p = Parser {
        toks: Lexer::tokens(src)?,
        pos: 0,
    };
    let mut declared = Vec::new();
    while p.peek() == Some(&Tok::Ident("var".into())) {
        p.pos += 1;
        declared.push(p.ident()?);
        p.expect(";")?;
    }
    let mut stmts = Vec::new();
    while p.peek().is_some() {
        stmts.push(p.stmt()?);
    }
    Program::new(declared, stmts)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(1, |(_, l)| *l)
    }

    fn err(&self, msg: &str) -> Error {
        Error::SchemaViolation(format!("line {}: {msg}", self.line()))
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, sym: &str) -> Result<()> {
        match self.bump() {
            Some(Tok::Sym(s)) if s == sym => Ok(()),
            other => Err(self.err(&format!("expected `{sym}`, found {other:?}"))),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.bump() {
            Some(Tok::Ident(s)) if !super::ast::is_keyword(&s) => Ok(s),
            other => Err(self.err(&format!("expected identifier, found {other:?}"))),
        }
    }

    fn stmt(&mut self) -> Result<Stmt> {
        if self.peek() == Some(&Tok::Ident("if".into())) {
            self.pos += 1;
            self.expect("(")?;
            let lhs = self.expr()?;
            let op = match self.bump() {
                Some(Tok::Sym("<")) => RelOp::Lt,
                Some(Tok::Sym("<=")) => RelOp::Le,
                Some(Tok::Sym("==")) => RelOp::Eq,
                Some(Tok::Sym("!=")) => RelOp::Ne,
                Some(Tok::Sym(">=")) => RelOp::Ge,
                other => return Err(self.err(&format!("expected comparison, found {other:?}"))),
            };
            let rhs = self.expr()?;
            self.expect(")")?;
            self.expect("{")?;
            let mut body = Vec::new();
            while self.peek() != Some(&Tok::Sym("}")) {
                if self.peek().is_none() {
                    return Err(self.err("unterminated `if` body"));
                }
                body.push(self.stmt()?);
            }
            self.pos += 1;
            Ok(Stmt::If(Cond { lhs, op, rhs }, body))
        } else {
            let v = self.ident()?;
            self.expect("=")?;
            let e = self.expr()?;
            self.expect(";")?;
            Ok(Stmt::Assign(v, e))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Int(v)) => Ok(Expr::Lit(v)),
            Some(Tok::Ident(s)) if s == "gid" => Ok(Expr::Gid),
            Some(Tok::Ident(s)) if !super::ast::is_keyword(&s) => Ok(Expr::Var(s)),
            Some(Tok::Sym("(")) => {
                let a = self.expr()?;
                let op = match self.bump() {
                    Some(Tok::Sym("+")) => BinOp::Add,
                    Some(Tok::Sym("*")) => BinOp::Mul,
                    Some(Tok::Sym("^")) => BinOp::Xor,
                    Some(Tok::Sym("&")) => BinOp::And,
                    Some(Tok::Sym("|")) => BinOp::Or,
                    other => return Err(self.err(&format!("expected operator, found {other:?}"))),
                };
                let b = self.expr()?;
                self.expect(")")?;
                Ok(Expr::bin(op, a, b))
            }
            other => Err(self.err(&format!("expected expression, found {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "var a;\nvar b;\na = (gid + 3);\nif (a != -2) {\n  b = ((a * b) ^ 7);\n  if (gid >= 16) {\n  }\n}\n";

    #[test]
    fn canonical_text_round_trips() {
        let p = parse(SAMPLE).unwrap();
        assert_eq!(print(&p), SAMPLE);
    }

    #[test]
    fn accepts_comments_and_loose_spacing() {
        let p = parse("var x; // decl\n x=(gid|1);").unwrap();
        assert_eq!(print(&p), "var x;\nx = (gid | 1);\n");
    }

    #[test]
    fn undeclared_use_is_rejected() {
        assert!(parse("var a;\na = b;\n").is_err());
        assert!(parse("a = 1;\n").is_err());
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let e = parse("var a;\na = (1 +);\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse("var a;\nif (a < 1) {\n").is_err());
        assert!(parse("var var;\n").is_err());
    }

    #[test]
    fn empty_text_is_the_empty_program() {
        let p = parse("").unwrap();
        assert_eq!(p, Program::default());
        assert_eq!(print(&p), "");
    }
}
