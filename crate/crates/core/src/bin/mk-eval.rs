//! Reference executor for minikernel tests, with optional injected faults.
//!
//! ```text
//! mk-eval KERNEL [--threads T] [--fault SPEC] [--seed S]
//! ```
//!
//! Prints `RESULT: xxxxxxxx` and exits 0 on success. A compile crash exits 3,
//! a runtime crash exits 4, a timeout sleeps until killed, usage and I/O
//! errors exit 2.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use cltest::minikernel::fault::fnv1a64;
use cltest::minikernel::{self, evaluate_invocation, EvalParams, EvalResult, FaultProfile};
use cltest::uid::is_well_formed;

#[derive(Debug, Parser)]
#[command(name = "mk-eval", version)]
struct Args {
    kernel: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: u32,
    #[arg(long, default_value = "none")]
    fault: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("mk-eval: {msg}");
    ExitCode::from(2)
}

/// Fault decisions are keyed by test UID when the kernel lives in a
/// repository test directory, otherwise by the source text.
fn subject(kernel: &Path, source: &str) -> String {
    kernel
        .canonicalize()
        .ok()
        .and_then(|p| p.parent()?.file_name()?.to_str().map(str::to_owned))
        .filter(|n| is_well_formed(n))
        .unwrap_or_else(|| format!("{:016x}", fnv1a64(&[source.as_bytes()])))
}

fn counter_path(kernel: &Path) -> PathBuf {
    if let Some(p) = std::env::var_os("MK_EVAL_COUNTER") {
        return PathBuf::from(p);
    }
    let abs = kernel.canonicalize().unwrap_or_else(|_| kernel.to_path_buf());
    let h = fnv1a64(&[abs.to_string_lossy().as_bytes()]);
    std::env::temp_dir().join(format!("mk-eval-nondet-{h:016x}.count"))
}

/// Returns the invocation number and bumps the persisted counter.
fn next_invocation(kernel: &Path) -> u64 {
    let path = counter_path(kernel);
    let n = fs::read_to_string(&path)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0u64);
    let _ = fs::write(&path, format!("{}\n", n + 1));
    n
}

fn main() -> ExitCode {
    let args = Args::parse();
    let source = match fs::read_to_string(&args.kernel) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", args.kernel.display())),
    };
    let params = match EvalParams::new(args.threads) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let fault = match FaultProfile::parse(&args.fault, args.seed) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let program = match minikernel::parse(&source) {
        Ok(p) => p,
        Err(e) => {
            // a kernel the compiler rejects is a compile failure
            eprintln!("mk-eval: compile error: {e}");
            return ExitCode::from(minikernel::EXIT_COMPILE_CRASH as u8);
        }
    };
    let invocation = match fault {
        FaultProfile::Nondet { .. } => next_invocation(&args.kernel),
        _ => 0,
    };
    let subject = subject(&args.kernel, &source);
    match evaluate_invocation(&program, &params, &fault, &subject, invocation) {
        EvalResult::Ok(c) => {
            let mut out = std::io::stdout().lock();
            if writeln!(out, "RESULT: {c}").and_then(|_| out.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        EvalResult::CompileCrash => {
            eprintln!("mk-eval: internal compiler error (injected)");
            ExitCode::from(minikernel::EXIT_COMPILE_CRASH as u8)
        }
        EvalResult::RuntimeCrash => {
            eprintln!("mk-eval: kernel crashed (injected)");
            ExitCode::from(minikernel::EXIT_RUNTIME_CRASH as u8)
        }
        EvalResult::Timeout => loop {
            std::thread::sleep(std::time::Duration::from_secs(3600));
        },
    }
}
