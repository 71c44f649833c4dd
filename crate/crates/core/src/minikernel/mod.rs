//! A deterministic toy kernel language used in place of generated OpenCL.
//!
//! Programs are straight-line assignments and `if` blocks over 64-bit
//! wrapping integers. Every thread starts with all variables at zero and
//! sees its own `gid`; the kernel result is the XOR over threads of an
//! FNV-1a hash of each thread's final variables.

pub mod ast;
pub mod emi;
pub mod eval;
pub mod fault;
pub mod generate;
pub mod syntax;

pub use ast::{BinOp, Cond, Expr, Program, RelOp, Stmt};
pub use emi::{inject_dead_code, injected_guards, make_variants};
pub use eval::{
    evaluate, evaluate_invocation, reference_checksum, thread_state, Checksum, EvalParams,
    EvalResult, Evaluator,
};
pub use fault::FaultProfile;
pub use generate::generate_program;
pub use syntax::{parse, print};

/// Exit status of `mk-eval` for a simulated compile crash.
pub const EXIT_COMPILE_CRASH: i32 = 3;
/// Exit status of `mk-eval` for a simulated runtime crash.
pub const EXIT_RUNTIME_CRASH: i32 = 4;
