use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::ast::{BinOp, Cond, Expr, Program, RelOp, Stmt};
use super::fault::FaultProfile;
use crate::error::{Error, Result};

/// The EMI input: kernels run with `thread_count` threads, `gid` in
/// `0..thread_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalParams {
    pub thread_count: u32,
}

impl EvalParams {
    pub fn new(thread_count: u32) -> Result<Self> {
        if thread_count == 0 {
            return Err(Error::InvalidArgument("thread count must be at least 1".into()));
        }
        Ok(EvalParams { thread_count })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Checksum(pub u32);

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalResult {
    Ok(Checksum),
    CompileCrash,
    RuntimeCrash,
    Timeout,
}

impl EvalResult {
    pub fn checksum(&self) -> Option<Checksum> {
        match self {
            EvalResult::Ok(c) => Some(*c),
            _ => None,
        }
    }
}

const FNV32_OFFSET: u32 = 0x811c_9dc5;
const FNV32_PRIME: u32 = 0x0100_0193;
const NONDET_FLIP: u32 = 0x5a5a_5a5a;

/// FNV-1a over the little-endian bytes of each variable, in declaration order.
pub fn thread_hash(values: &[i64]) -> u32 {
    let mut h = FNV32_OFFSET;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= u32::from(b);
            h = h.wrapping_mul(FNV32_PRIME);
        }
    }
    h
}

enum CExpr {
    Lit(i64),
    Gid,
    Slot(usize),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
}

struct CCond {
    lhs: CExpr,
    op: RelOp,
    rhs: CExpr,
    dead_shape: bool,
}

enum CStmt {
    Assign(usize, CExpr),
    If(CCond, Vec<CStmt>),
}

struct Compiled {
    slots: usize,
    body: Vec<CStmt>,
}

fn compile(program: &Program) -> Compiled {
    let slots: HashMap<&str, usize> = program
        .declared_vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    fn expr(e: &Expr, slots: &HashMap<&str, usize>) -> CExpr {
        match e {
            Expr::Lit(v) => CExpr::Lit(*v),
            Expr::Gid => CExpr::Gid,
            Expr::Var(v) => CExpr::Slot(slots[v.as_str()]),
            Expr::Bin(op, a, b) => {
                CExpr::Bin(*op, Box::new(expr(a, slots)), Box::new(expr(b, slots)))
            }
        }
    }
    fn cond(c: &Cond, slots: &HashMap<&str, usize>) -> CCond {
        CCond {
            lhs: expr(&c.lhs, slots),
            op: c.op,
            rhs: expr(&c.rhs, slots),
            dead_shape: c.is_dead_guard_shape(),
        }
    }
    fn block(stmts: &[Stmt], slots: &HashMap<&str, usize>) -> Vec<CStmt> {
        stmts
            .iter()
            .map(|s| match s {
                Stmt::Assign(v, e) => CStmt::Assign(slots[v.as_str()], expr(e, slots)),
                Stmt::If(c, body) => CStmt::If(cond(c, slots), block(body, slots)),
            })
            .collect()
    }
    Compiled {
        slots: program.declared_vars.len(),
        body: block(&program.statements, &slots),
    }
}

struct Thread<'a> {
    gid: i64,
    state: &'a mut [i64],
    exec_dead: bool,
}

impl Thread<'_> {
    fn expr(&self, e: &CExpr) -> i64 {
        match e {
            CExpr::Lit(v) => *v,
            CExpr::Gid => self.gid,
            CExpr::Slot(i) => self.state[*i],
            CExpr::Bin(op, a, b) => op.apply(self.expr(a), self.expr(b)),
        }
    }

    fn run(&mut self, stmts: &[CStmt]) {
        for s in stmts {
            match s {
                CStmt::Assign(slot, e) => {
                    let v = self.expr(e);
                    self.state[*slot] = v;
                }
                CStmt::If(c, body) => {
                    let taken = (self.exec_dead && c.dead_shape)
                        || c.op.holds(self.expr(&c.lhs), self.expr(&c.rhs));
                    if taken {
                        self.run(body);
                    }
                }
            }
        }
    }
}

/// Final variable state of one thread, in declaration order.
pub fn thread_state(program: &Program, gid: u32) -> Vec<i64> {
    let compiled = compile(program);
    let mut state = vec![0i64; compiled.slots];
    Thread {
        gid: i64::from(gid),
        state: &mut state,
        exec_dead: false,
    }
    .run(&compiled.body);
    state
}

fn checksum_with(program: &Program, params: &EvalParams, exec_dead: bool) -> Checksum {
    let compiled = compile(program);
    let mut state = vec![0i64; compiled.slots];
    let mut acc = 0u32;
    for gid in 0..params.thread_count {
        state.iter_mut().for_each(|v| *v = 0);
        Thread {
            gid: i64::from(gid),
            state: &mut state,
            exec_dead,
        }
        .run(&compiled.body);
        acc ^= thread_hash(&state);
    }
    Checksum(acc)
}

/// Fault-free checksum: XOR over threads of each thread's state hash.
pub fn reference_checksum(program: &Program, params: &EvalParams) -> Checksum {
    checksum_with(program, params, false)
}

/// Evaluates with a fault profile applied. `subject` keys the per-test
/// fault decision; `invocation` only matters for `Nondet`.
pub fn evaluate_invocation(
    program: &Program,
    params: &EvalParams,
    fault: &FaultProfile,
    subject: &str,
    invocation: u64,
) -> EvalResult {
    match fault {
        FaultProfile::None => EvalResult::Ok(reference_checksum(program, params)),
        FaultProfile::ExecDead => EvalResult::Ok(checksum_with(program, params, true)),
        FaultProfile::Nondet { period } => {
            let c = reference_checksum(program, params);
            if (invocation / period) % 2 == 1 {
                EvalResult::Ok(Checksum(c.0 ^ NONDET_FLIP))
            } else {
                EvalResult::Ok(c)
            }
        }
        f @ FaultProfile::WrongCode { .. } => {
            let c = reference_checksum(program, params);
            if f.selects(subject) {
                EvalResult::Ok(Checksum(c.0 ^ f.corruption_mask(subject)))
            } else {
                EvalResult::Ok(c)
            }
        }
        f @ FaultProfile::CompileCrash { .. } if f.selects(subject) => EvalResult::CompileCrash,
        f @ FaultProfile::RuntimeCrash { .. } if f.selects(subject) => EvalResult::RuntimeCrash,
        f @ FaultProfile::Timeout { .. } if f.selects(subject) => EvalResult::Timeout,
        FaultProfile::CompileCrash { .. }
        | FaultProfile::RuntimeCrash { .. }
        | FaultProfile::Timeout { .. } => EvalResult::Ok(reference_checksum(program, params)),
    }
}

pub fn evaluate(
    program: &Program,
    params: &EvalParams,
    fault: &FaultProfile,
    subject: &str,
) -> EvalResult {
    evaluate_invocation(program, params, fault, subject, 0)
}

/// An in-process implementation under test. Holds the invocation counter
/// that `Nondet` needs, so one instance must not be shared between
/// configurations.
#[derive(Debug)]
pub struct Evaluator {
    fault: FaultProfile,
    invocations: AtomicU64,
}

impl Evaluator {
    pub fn new(fault: FaultProfile) -> Self {
        Evaluator {
            fault,
            invocations: AtomicU64::new(0),
        }
    }

    pub fn fault(&self) -> &FaultProfile {
        &self.fault
    }

    pub fn evaluate(&self, program: &Program, params: &EvalParams, subject: &str) -> EvalResult {
        let n = self.invocations.fetch_add(1, Ordering::SeqCst);
        evaluate_invocation(program, params, &self.fault, subject, n)
    }
}
