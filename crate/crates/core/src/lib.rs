//! Campaign orchestration for differential compiler testing.
//!
//! A corpus of deterministic kernels is executed across several
//! implementation configurations. Each execution is classified by majority
//! vote across configurations (random differential testing) and, for
//! equivalence-modulo-inputs families, by agreement between a base program
//! and its dead-code variants. Everything is recorded in a UID-keyed
//! repository on disk and can be browsed through a small JSON API.
//!
//! Module map:
//!
//! - [`store`]: the repository (entries, execution logs, verdicts, views)
//! - [`corpus`]: test registration, EMI families, invalidation
//! - [`minikernel`]: the toy kernel language, generator, evaluator, fault profiles
//! - [`runner`]: external-process execution with timeouts and output capture
//! - [`oracle`]: majority voting, EMI verdicts, determinism and reliability screens
//! - [`report`]: mode × configuration summary tables rendered as CSV/HTML
//! - [`server`]: HTTP JSON API for the experiment viewer
//! - [`cli`]: the `cltest` command-line entry point

pub mod cli;
pub mod corpus;
pub mod error;
pub mod minikernel;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod server;
pub mod store;
pub mod uid;

pub use corpus::{Corpus, EmiFamily, FamilyLink, TestCase, TestFilter, TestMode};
pub use error::{Error, Result};
pub use minikernel::{EvalParams, EvalResult, FaultProfile, Program};
pub use oracle::{EmiVerdict, Label, ReliabilityReport, TestVerdict};
pub use report::SummaryTable;
pub use runner::{Configuration, Exit, ExecutionRecord, Outcome};
pub use store::{QueryFilter, RepoEntry, Repository, ViewDef};
pub use uid::Uid;
