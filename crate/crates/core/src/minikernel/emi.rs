use rand::Rng;

use super::ast::{Cond, Program, Stmt};
use super::eval::EvalParams;
use super::fault::splitmix64;
use super::generate::{random_assignments, rng_for};

const INJECT_STREAM: u64 = 0x454d49;

/// Inserts `block_count` blocks guarded by `gid >= T` (false for every
/// thread of `params`) at seeded top-level positions. Bodies are random
/// assignments over the declared variables.
pub fn inject_dead_code(program: &Program, params: &EvalParams, seed: u64, block_count: usize) -> Program {
    let mut out = program.clone();
    if block_count == 0 {
        return out;
    }
    let mut rng = rng_for(seed, INJECT_STREAM);
    for _ in 0..block_count {
        let at = rng.random_range(0..=out.statements.len());
        let body_len = rng.random_range(1..=3);
        let body = random_assignments(&mut rng, &program.declared_vars, body_len);
        out.statements
            .insert(at, Stmt::If(Cond::dead_guard(params.thread_count), body));
    }
    out
}

/// `count` EMI variants, each with 1 to 3 injected blocks drawn from a
/// sub-seed of `seed`.
pub fn make_variants(program: &Program, params: &EvalParams, count: usize, seed: u64) -> Vec<Program> {
    (0..count as u64)
        .map(|i| {
            let sub = splitmix64(seed ^ splitmix64(i));
            let blocks = 1 + (sub % 3) as usize;
            inject_dead_code(program, params, sub, blocks)
        })
        .collect()
}

/// Guards of all top-level blocks present in `variant` but not in `base`,
/// assuming `variant` was produced by [`inject_dead_code`] from `base`.
pub fn injected_guards<'a>(base: &Program, variant: &'a Program) -> Vec<&'a Cond> {
    let mut remaining = base.statements.iter().peekable();
    let mut guards = Vec::new();
    for s in &variant.statements {
        if remaining.peek() == Some(&s) {
            remaining.next();
        } else if let Stmt::If(c, _) = s {
            guards.push(c);
        }
    }
    guards
}
