use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Mul,
    Xor,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 5] = [BinOp::Add, BinOp::Mul, BinOp::Xor, BinOp::And, BinOp::Or];

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Mul => "*",
            BinOp::Xor => "^",
            BinOp::And => "&",
            BinOp::Or => "|",
        }
    }

    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Xor => a ^ b,
            BinOp::And => a & b,
            BinOp::Or => a | b,
        }
    }
}

/// Comparison operators. `>=` is only produced by dead-code injection; the
/// generator draws from the other four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Eq => "==",
            RelOp::Ne => "!=",
            RelOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            RelOp::Lt => a < b,
            RelOp::Le => a <= b,
            RelOp::Eq => a == b,
            RelOp::Ne => a != b,
            RelOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(i64),
    Gid,
    Var(String),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    fn visit_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Lit(_) | Expr::Gid => {}
            Expr::Var(v) => out.push(v),
            Expr::Bin(_, a, b) => {
                a.visit_vars(out);
                b.visit_vars(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cond {
    pub lhs: Expr,
    pub op: RelOp,
    pub rhs: Expr,
}

impl Cond {
    /// The canonical always-false guard for thread counts up to `threads`.
    pub fn dead_guard(threads: u32) -> Cond {
        Cond {
            lhs: Expr::Gid,
            op: RelOp::Ge,
            rhs: Expr::Lit(i64::from(threads)),
        }
    }

    /// `gid >= <literal>`, the shape of an injected guard.
    pub fn is_dead_guard_shape(&self) -> bool {
        matches!(
            (&self.lhs, self.op, &self.rhs),
            (Expr::Gid, RelOp::Ge, Expr::Lit(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Stmt {
    Assign(String, Expr),
    If(Cond, Vec<Stmt>),
}

impl Stmt {
    /// Number of statements in this subtree, the statement itself included.
    pub fn size(&self) -> usize {
        match self {
            Stmt::Assign(..) => 1,
            Stmt::If(_, body) => 1 + body.iter().map(Stmt::size).sum::<usize>(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Program {
    pub declared_vars: Vec<String>,
    pub statements: Vec<Stmt>,
}

impl Program {
    pub fn new(declared_vars: Vec<String>, statements: Vec<Stmt>) -> Result<Program> {
        let p = Program {
            declared_vars,
            statements,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks identifier well-formedness, unique declarations and that every
    /// use refers to a declared variable.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for v in &self.declared_vars {
            if !is_identifier(v) {
                return Err(Error::SchemaViolation(format!("bad identifier {v:?}")));
            }
            if !seen.insert(v.as_str()) {
                return Err(Error::SchemaViolation(format!("{v} declared twice")));
            }
        }
        let mut used = Vec::new();
        fn walk<'a>(stmts: &'a [Stmt], used: &mut Vec<&'a str>) {
            for s in stmts {
                match s {
                    Stmt::Assign(v, e) => {
                        used.push(v);
                        e.visit_vars(used);
                    }
                    Stmt::If(c, body) => {
                        c.lhs.visit_vars(used);
                        c.rhs.visit_vars(used);
                        walk(body, used);
                    }
                }
            }
        }
        walk(&self.statements, &mut used);
        for u in used {
            if !seen.contains(u) {
                return Err(Error::SchemaViolation(format!("{u} used but not declared")));
            }
        }
        Ok(())
    }

    pub fn statement_count(&self) -> usize {
        self.statements.iter().map(Stmt::size).sum()
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !is_keyword(s)
}

pub fn is_keyword(s: &str) -> bool {
    matches!(s, "var" | "if" | "gid")
}
