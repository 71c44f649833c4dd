use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ast::{BinOp, Cond, Expr, Program, RelOp, Stmt};
use crate::corpus::TestMode;

const MAX_VARS: usize = 6;
const MAX_EXPR_DEPTH: u32 = 3;
const MAX_IF_DEPTH: u32 = 3;

/// Operator mix per mode. Only the mix differs; modes beyond `Basic` are
/// labels at this layer.
fn operators(mode: TestMode) -> &'static [BinOp] {
    use BinOp::*;
    match mode {
        TestMode::Basic | TestMode::All => &[Add, Mul, Xor, And, Or],
        TestMode::Vector => &[Add, Mul, Xor],
        TestMode::Barrier => &[Xor, And, Or, Add],
        TestMode::AtomicSection => &[Add, Or, Xor],
        TestMode::AtomicReduction => &[Add, Xor, Mul],
    }
}

const GENERATED_RELOPS: [RelOp; 4] = [RelOp::Lt, RelOp::Le, RelOp::Eq, RelOp::Ne];

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates a program with exactly `size` statements (nested ones
/// included). Deterministic in `(seed, size, mode)`.
pub fn generate_program(seed: u64, size: usize, mode: TestMode) -> Program {
    let size = size.max(1);
    let mut g = Gen {
        rng: rng_for(seed, mode.index() as u64 + 1),
        ops: operators(mode),
        vars: Vec::new(),
    };
    let nvars = g.rng.random_range(1..=MAX_VARS.min(size + 1));
    g.vars = (0..nvars).map(|i| format!("v{i}")).collect();
    let statements = g.block(size, 0);
    let program = Program {
        declared_vars: g.vars,
        statements,
    };
    debug_assert!(program.validate().is_ok());
    debug_assert_eq!(program.statement_count(), size);
    program
}

struct Gen {
    rng: ChaCha8Rng,
    ops: &'static [BinOp],
    vars: Vec<String>,
}

impl Gen {
    /// A block consuming exactly `budget` statements.
    fn block(&mut self, mut budget: usize, depth: u32) -> Vec<Stmt> {
        let mut out = Vec::new();
        while budget > 0 {
            let s = self.stmt(budget, depth);
            budget -= s.size();
            out.push(s);
        }
        out
    }

    fn stmt(&mut self, budget: usize, depth: u32) -> Stmt {
        if budget >= 2 && depth < MAX_IF_DEPTH && self.rng.random_bool(0.25) {
            let body_budget = self.rng.random_range(1..=(budget - 1).min(5));
            let cond = self.cond();
            let body = self.block(body_budget, depth + 1);
            Stmt::If(cond, body)
        } else {
            let target = self.var();
            Stmt::Assign(target, self.expr(0))
        }
    }

    fn var(&mut self) -> String {
        let i = self.rng.random_range(0..self.vars.len());
        self.vars[i].clone()
    }

    fn literal(&mut self) -> i64 {
        if self.rng.random_bool(0.7) {
            self.rng.random_range(0..64)
        } else {
            i64::from(self.rng.random::<u32>())
        }
    }

    fn leaf(&mut self) -> Expr {
        match self.rng.random_range(0..3) {
            0 => Expr::Lit(self.literal()),
            1 => Expr::Gid,
            _ => Expr::Var(self.var()),
        }
    }

    fn expr(&mut self, depth: u32) -> Expr {
        if depth >= MAX_EXPR_DEPTH || self.rng.random_bool(0.35) {
            return self.leaf();
        }
        let op = self.ops[self.rng.random_range(0..self.ops.len())];
        let a = self.expr(depth + 1);
        let b = self.expr(depth + 1);
        Expr::bin(op, a, b)
    }

    fn cond(&mut self) -> Cond {
        let op = GENERATED_RELOPS[self.rng.random_range(0..GENERATED_RELOPS.len())];
        Cond {
            lhs: self.expr(1),
            op,
            rhs: self.expr(1),
        }
    }
}

/// Random assignment statements over `vars`, used for dead-code bodies.
pub(crate) fn random_assignments(rng: &mut ChaCha8Rng, vars: &[String], count: usize) -> Vec<Stmt> {
    if vars.is_empty() {
        return Vec::new();
    }
    let mut g = Gen {
        rng: rng.clone(),
        ops: operators(TestMode::All),
        vars: vars.to_vec(),
    };
    let body = (0..count)
        .map(|_| {
            let t = g.var();
            Stmt::Assign(t, g.expr(1))
        })
        .collect();
    *rng = g.rng;
    body
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minikernel::syntax::print;

    #[test]
    fn same_inputs_same_text() {
        let a = print(&generate_program(7, 20, TestMode::Basic));
        let b = print(&generate_program(7, 20, TestMode::Basic));
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        for s in 0..100u64 {
            let a = print(&generate_program(s, 20, TestMode::Basic));
            let b = print(&generate_program(s + 1, 20, TestMode::Basic));
            assert_ne!(a, b, "seeds {s} and {}", s + 1);
        }
    }

    #[test]
    fn budget_of_one_is_one_statement() {
        let p = generate_program(7, 1, TestMode::Basic);
        assert_eq!(p.statements.len(), 1);
        assert_eq!(p.statement_count(), 1);
    }

    #[test]
    fn statement_budget_is_exact_for_every_mode() {
        for mode in TestMode::ALL {
            for size in [1, 2, 5, 30, 100] {
                let p = generate_program(size as u64 * 31, size, mode);
                assert_eq!(p.statement_count(), size);
                p.validate().unwrap();
            }
        }
    }

    #[test]
    fn generator_never_emits_ge() {
        for s in 0..200 {
            let text = print(&generate_program(s, 40, TestMode::All));
            assert!(!text.contains(">="), "{text}");
        }
    }
}
