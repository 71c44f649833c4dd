#![allow(dead_code)]

use cltest::corpus::{Corpus, TestMode};
use cltest::minikernel::{generate_program, print};
use cltest::uid::UidSource;
use cltest::{Configuration, Repository, TestCase};
use tempfile::TempDir;

pub const MK_EVAL: &str = env!("CARGO_BIN_EXE_mk-eval");

pub fn fresh_repo() -> (TempDir, Repository) {
    let dir = scratch_dir();
    Repository::init(dir.path()).unwrap();
    let repo = Repository::open_writer(dir.path()).unwrap();
    (dir, repo)
}

pub fn seeded_repo(seed: u64) -> (TempDir, Repository) {
    let (dir, repo) = fresh_repo();
    (dir, repo.with_uid_source(UidSource::seeded(seed)))
}

/// `mk-eval` invocation template with an optional fault spec.
pub fn mk_template(fault: &str, seed: u64) -> String {
    let exe = shlex::try_quote(MK_EVAL).unwrap();
    format!("{exe} {{kernel}} --threads {{threads}} --fault {fault} --seed {seed}")
}

pub fn add_config(repo: &Repository, name: &str, fault: &str, seed: u64) -> Configuration {
    let config = Configuration::new(repo.new_uid(), name, &mk_template(fault, seed), 10_000).unwrap();
    repo.put_config(&config).unwrap();
    config
}

/// Generates `count` tests of `mode` with per-test seeds derived from `seed`.
pub fn generate(repo: &Repository, count: usize, mode: TestMode, seed: u64, size: usize) -> Vec<TestCase> {
    let mut corpus = Corpus::load(repo).unwrap();
    (0..count as u64)
        .map(|i| {
            let p = generate_program(seed.wrapping_mul(1_000_003).wrapping_add(i), size, mode);
            corpus.register_test(&print(&p), mode, "1.0.0", None).unwrap()
        })
        .collect()
}

/// Scratch directory under the target dir, which is usually on a faster
/// filesystem than the system temp dir.
pub fn scratch_dir() -> TempDir {
    tempfile::tempdir_in(env!("CARGO_TARGET_TMPDIR")).unwrap()
}
