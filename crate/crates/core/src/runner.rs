//! Runs one test on one configuration as a child process.
//!
//! Executor contract: exit 0 with a `RESULT: <hex>` line on standard output
//! is a result; exit 3 is a compiler crash; any other exit or a signal is a
//! runtime crash; a child still running at the timeout is killed (with its
//! whole process group) and recorded as a timeout.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::corpus::TestCase;
use crate::error::{Error, Result};
use crate::minikernel::{EvalParams, EXIT_COMPILE_CRASH};
use crate::store::Repository;
use crate::uid::Uid;

/// Captured streams are cut at this many bytes.
pub const CAPTURE_LIMIT: usize = 1024 * 1024;
pub const TRUNCATION_MARKER: &str = "[cltest: output truncated,";
/// Allowed overshoot between the timeout and the reaped child.
pub const KILL_GRACE_MS: u64 = 500;
pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub kind: String,
    pub uid: Uid,
    pub name: String,
    /// Command line with `{kernel}` and optionally `{threads}` placeholders.
    pub command_template: String,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    pub timeout_ms: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub created_at: DateTime<Utc>,
}

impl Configuration {
    pub fn new(uid: Uid, name: &str, command_template: &str, timeout_ms: u64) -> Result<Self> {
        let c = Configuration {
            kind: "config".into(),
            uid,
            name: name.to_owned(),
            command_template: command_template.to_owned(),
            env: BTreeMap::new(),
            timeout_ms,
            metadata: BTreeMap::new(),
            created_at: Utc::now(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != "config" {
            return Err(Error::SchemaViolation("config meta.kind must be \"config\"".into()));
        }
        if self.name.trim().is_empty() {
            return Err(Error::SchemaViolation("configuration name is empty".into()));
        }
        if self.timeout_ms < 1 {
            return Err(Error::SchemaViolation("timeout_ms must be at least 1".into()));
        }
        if !self.command_template.contains("{kernel}") {
            return Err(Error::SchemaViolation(
                "command_template must contain {kernel}".into(),
            ));
        }
        if shlex::split(&self.command_template).is_none_or(|w| w.is_empty()) {
            return Err(Error::SchemaViolation(format!(
                "command_template {:?} does not split into words",
                self.command_template
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ExitRepr", into = "ExitRepr")]
pub enum Exit {
    Code(i32),
    Signal(i32),
    TimedOut,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ExitRepr {
    Code { code: i32 },
    Signal { signal: i32 },
    TimedOut,
}

impl From<ExitRepr> for Exit {
    fn from(r: ExitRepr) -> Exit {
        match r {
            ExitRepr::Code { code } => Exit::Code(code),
            ExitRepr::Signal { signal } => Exit::Signal(signal),
            ExitRepr::TimedOut => Exit::TimedOut,
        }
    }
}

impl From<Exit> for ExitRepr {
    fn from(e: Exit) -> ExitRepr {
        match e {
            Exit::Code(code) => ExitRepr::Code { code },
            Exit::Signal(signal) => ExitRepr::Signal { signal },
            Exit::TimedOut => ExitRepr::TimedOut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeKind {
    CompilerCrash,
    RuntimeCrash,
    Timeout,
    Result,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::CompilerCrash,
        OutcomeKind::RuntimeCrash,
        OutcomeKind::Timeout,
        OutcomeKind::Result,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::CompilerCrash => "CompilerCrash",
            OutcomeKind::RuntimeCrash => "RuntimeCrash",
            OutcomeKind::Timeout => "Timeout",
            OutcomeKind::Result => "Result",
        }
    }

    pub fn parse(s: &str) -> Option<OutcomeKind> {
        let norm = normalize_name(s);
        OutcomeKind::ALL
            .into_iter()
            .find(|k| normalize_name(k.as_str()) == norm)
    }
}

pub(crate) fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '_' | '-'))
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Outcome {
    CompilerCrash,
    RuntimeCrash,
    Timeout,
    Result { value: String },
}

impl Outcome {
    pub fn result(value: &str) -> Outcome {
        Outcome::Result {
            value: value.to_owned(),
        }
    }

    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::CompilerCrash => OutcomeKind::CompilerCrash,
            Outcome::RuntimeCrash => OutcomeKind::RuntimeCrash,
            Outcome::Timeout => OutcomeKind::Timeout,
            Outcome::Result { .. } => OutcomeKind::Result,
        }
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            Outcome::Result { value } => Some(value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub test_uid: Uid,
    pub config_uid: Uid,
    pub campaign_id: Uid,
    pub started_at: DateTime<Utc>,
    pub wall_ms: u64,
    pub exit: Exit,
    #[serde(with = "crate::store::blob")]
    pub stdout: Vec<u8>,
    #[serde(with = "crate::store::blob")]
    pub stderr: Vec<u8>,
    pub outcome: Outcome,
    pub command: String,
}

/// Maps a finished process to an outcome. Total over all inputs.
pub fn parse_output(exit: Exit, stdout: &[u8], _stderr: &[u8]) -> Outcome {
    match exit {
        Exit::TimedOut => Outcome::Timeout,
        Exit::Code(0) => match result_line(stdout) {
            Some(v) => Outcome::Result { value: v },
            None => Outcome::RuntimeCrash,
        },
        Exit::Code(EXIT_COMPILE_CRASH) => Outcome::CompilerCrash,
        Exit::Code(_) | Exit::Signal(_) => Outcome::RuntimeCrash,
    }
}

/// Payload of the first `RESULT: <hex>` line, trimmed and lowercased.
fn result_line(stdout: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(stdout);
    text.lines().find_map(|line| {
        let v = line.trim().strip_prefix("RESULT:")?.trim();
        (!v.is_empty() && v.bytes().all(|b| b.is_ascii_hexdigit())).then(|| v.to_ascii_lowercase())
    })
}

/// Substitutes `{kernel}` (shell-quoted when needed) and `{threads}`.
pub fn render_command(template: &str, kernel: &Path, threads: u32) -> String {
    let k = kernel.to_string_lossy();
    let quoted = shlex::try_quote(&k).map_or_else(|_| k.to_string(), |q| q.into_owned());
    template
        .replace("{kernel}", &quoted)
        .replace("{threads}", &threads.to_string())
}

/// The exact command line `run_one` executes for this triple.
pub fn rerun_command(
    repo: &Repository,
    test_uid: &Uid,
    config_uid: &Uid,
    params: &EvalParams,
) -> Result<String> {
    let test = repo.test(test_uid).map_err(|e| match e {
        Error::NotFound(u) => Error::UnknownUid(u),
        e => e,
    })?;
    let config = repo.config(config_uid).map_err(|e| match e {
        Error::NotFound(u) => Error::UnknownUid(u),
        e => e,
    })?;
    Ok(command_for(repo, &test, &config, params))
}

pub fn command_for(repo: &Repository, test: &TestCase, config: &Configuration, params: &EvalParams) -> String {
    render_command(&config.command_template, &repo.kernel_path(test), params.thread_count)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capture {
    pub started_at: DateTime<Utc>,
    pub wall_ms: u64,
    pub exit: Exit,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

fn drain<R: Read>(mut r: R) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    let mut buf = [0u8; 64 * 1024];
    loop {
        match r.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let room = CAPTURE_LIMIT.saturating_sub(kept.len());
                let take = room.min(n);
                kept.extend_from_slice(&buf[..take]);
                dropped += n - take;
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    if dropped > 0 {
        kept.extend_from_slice(format!("\n{TRUNCATION_MARKER} {dropped} bytes omitted]\n").as_bytes());
    }
    kept
}

/// Runs `command` (split shell-style, no shell involved) with extra `env`,
/// killing its process group after `timeout_ms`.
pub fn execute(command: &str, env: &BTreeMap<String, String>, timeout_ms: u64) -> Result<Capture> {
    let words = shlex::split(command)
        .filter(|w| !w.is_empty())
        .ok_or_else(|| Error::BadTemplate(command.to_owned()))?;
    let mut cmd = Command::new(&words[0]);
    cmd.args(&words[1..])
        .envs(env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let started_at = Utc::now();
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
            Error::ExecutorNotFound(format!("{}: {e}", words[0]))
        }
        _ => e.into(),
    })?;
    let out = child.stdout.take().expect("piped");
    let err = child.stderr.take().expect("piped");
    let out_reader = thread::spawn(move || drain(out));
    let err_reader = thread::spawn(move || drain(err));

    // wait_timeout may wake slightly early; only give up at the deadline
    let deadline = start + Duration::from_millis(timeout_ms);
    let status = loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match child.wait_timeout(left)? {
            Some(st) => break Some(st),
            None if Instant::now() >= deadline => break None,
            None => {}
        }
    };
    let exit = match status {
        Some(st) => match (st.code(), st.signal()) {
            (Some(c), _) => Exit::Code(c),
            (None, Some(s)) => Exit::Signal(s),
            (None, None) => Exit::Signal(0),
        },
        None => {
            // SAFETY: plain kill(2) on the child's own process group.
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.kill();
            child.wait()?;
            Exit::TimedOut
        }
    };
    let wall_ms = start.elapsed().as_millis() as u64;
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(Capture {
        started_at,
        wall_ms,
        exit,
        stdout,
        stderr,
    })
}

/// Executes without persisting.
pub fn execute_pair(
    repo: &Repository,
    test: &TestCase,
    config: &Configuration,
    params: &EvalParams,
    campaign_id: &Uid,
) -> Result<ExecutionRecord> {
    if !test.is_active() {
        return Err(Error::InactiveTest(test.uid.clone()));
    }
    let kernel = repo.kernel_path(test);
    if !kernel.exists() {
        return Err(Error::NotFound(kernel.display().to_string()));
    }
    let command = command_for(repo, test, config, params);
    let cap = execute(&command, &config.env, config.timeout_ms)?;
    let outcome = parse_output(cap.exit, &cap.stdout, &cap.stderr);
    Ok(ExecutionRecord {
        test_uid: test.uid.clone(),
        config_uid: config.uid.clone(),
        campaign_id: campaign_id.clone(),
        started_at: cap.started_at,
        wall_ms: cap.wall_ms,
        exit: cap.exit,
        stdout: cap.stdout,
        stderr: cap.stderr,
        outcome,
        command,
    })
}

/// Executes one pair and appends the record to the campaign log.
pub fn run_one(
    repo: &Repository,
    test: &TestCase,
    config: &Configuration,
    params: &EvalParams,
    campaign_id: &Uid,
) -> Result<ExecutionRecord> {
    repo.campaign(campaign_id)?;
    let record = execute_pair(repo, test, config, params, campaign_id)?;
    repo.append_execution(campaign_id, &record)?;
    Ok(record)
}

/// Label of the campaign that collects reruns made outside any campaign.
pub const RERUN_CAMPAIGN_LABEL: &str = "reruns";

/// The rerun campaign for `params`, created on first use.
pub fn rerun_campaign(repo: &Repository, params: &EvalParams) -> Result<Uid> {
    let existing = repo
        .campaigns()?
        .into_iter()
        .find(|c| c.label.as_deref() == Some(RERUN_CAMPAIGN_LABEL) && c.params == *params);
    match existing {
        Some(c) => Ok(c.uid),
        None => Ok(repo
            .create_campaign(Vec::new(), Vec::new(), *params, 1, Some(RERUN_CAMPAIGN_LABEL.into()))?
            .uid),
    }
}

/// Runs every (test, config) pair once on a pool of `parallelism` workers.
/// Records funnel through the calling thread, which is the only writer.
pub fn run_campaign(
    repo: &Repository,
    tests: &[TestCase],
    configs: &[Configuration],
    params: &EvalParams,
    parallelism: usize,
) -> Result<Uid> {
    run_campaign_labeled(repo, tests, configs, params, parallelism, None)
}

pub fn run_campaign_labeled(
    repo: &Repository,
    tests: &[TestCase],
    configs: &[Configuration],
    params: &EvalParams,
    parallelism: usize,
    label: Option<String>,
) -> Result<Uid> {
    if parallelism == 0 {
        return Err(Error::InvalidArgument("parallelism must be at least 1".into()));
    }
    if let Some(t) = tests.iter().find(|t| !t.is_active()) {
        return Err(Error::InactiveTest(t.uid.clone()));
    }
    let campaign = repo.create_campaign(
        tests.iter().map(|t| t.uid.clone()).collect(),
        configs.iter().map(|c| c.uid.clone()).collect(),
        *params,
        parallelism,
        label,
    )?;
    let total = tests.len() * configs.len();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut failure: Option<Error> = None;
    thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<Result<ExecutionRecord>>();
        for _ in 0..parallelism.min(total.max(1)) {
            let tx = tx.clone();
            let (next, abort, campaign) = (&next, &abort, &campaign);
            s.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let test = &tests[i / configs.len()];
                let config = &configs[i % configs.len()];
                let r = execute_pair(repo, test, config, params, &campaign.uid);
                if tx.send(r).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for r in rx {
            if failure.is_some() {
                continue;
            }
            match r.and_then(|rec| repo.append_execution(&campaign.uid, &rec)) {
                Ok(()) => {}
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure = Some(e);
                }
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(campaign.uid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(s: &str) -> Vec<u8> {
        s.as_bytes().to_vec()
    }

    #[test]
    fn result_line_is_parsed() {
        assert_eq!(
            parse_output(Exit::Code(0), &b("RESULT: 00ff00ff\n"), b""),
            Outcome::result("00ff00ff")
        );
        assert_eq!(
            parse_output(Exit::Code(0), &b("log\nRESULT:   00FF00FF  \n"), b""),
            Outcome::result("00ff00ff")
        );
    }

    #[test]
    fn compile_crash_code() {
        assert_eq!(
            parse_output(Exit::Code(3), b"", &b("build error: x")),
            Outcome::CompilerCrash
        );
    }

    /// Golden decision table: every exit class against a present, absent
    /// and malformed RESULT payload.
    #[test]
    fn decision_table() {
        let payloads: [(&str, Option<&str>); 4] = [
            ("RESULT: 0a0b0c0d\n", Some("0a0b0c0d")),
            ("", None),
            ("garbage", None),
            ("RESULT: xyz\n", None),
        ];
        let exits = [
            Exit::Code(0),
            Exit::Code(3),
            Exit::Code(4),
            Exit::Code(1),
            Exit::Code(-1),
            Exit::Signal(9),
            Exit::Signal(11),
            Exit::TimedOut,
        ];
        for exit in exits {
            for (out, value) in payloads {
                let got = parse_output(exit, out.as_bytes(), b"");
                let want = match (exit, value) {
                    (Exit::TimedOut, _) => Outcome::Timeout,
                    (Exit::Code(0), Some(v)) => Outcome::result(v),
                    (Exit::Code(0), None) => Outcome::RuntimeCrash,
                    (Exit::Code(3), _) => Outcome::CompilerCrash,
                    _ => Outcome::RuntimeCrash,
                };
                assert_eq!(got, want, "{exit:?} {out:?}");
            }
        }
    }

    #[test]
    fn command_rendering() {
        let p = Path::new("repo/tests/0123456789abcdef/kernel.mk");
        assert_eq!(
            render_command("mk-eval {kernel} --threads {threads}", p, 16),
            "mk-eval repo/tests/0123456789abcdef/kernel.mk --threads 16"
        );
        assert_eq!(
            render_command("mk-eval {kernel}", p, 16),
            "mk-eval repo/tests/0123456789abcdef/kernel.mk"
        );
        let spaced = render_command("run {kernel}", Path::new("/tmp/a b/k.mk"), 1);
        assert_eq!(shlex::split(&spaced).unwrap(), ["run", "/tmp/a b/k.mk"]);
    }

    #[test]
    fn configuration_validation() {
        let u = Uid::from_u64(1);
        assert!(Configuration::new(u.clone(), "x", "mk-eval {kernel}", 1).is_ok());
        assert!(Configuration::new(u.clone(), "x", "mk-eval", 10).is_err());
        assert!(Configuration::new(u.clone(), "x", "mk-eval {kernel}", 0).is_err());
        assert!(Configuration::new(u.clone(), "", "mk-eval {kernel}", 10).is_err());
        assert!(Configuration::new(u, "x", "mk-eval '{kernel}", 10).is_err());
    }

    #[test]
    fn outcome_serialization_shape() {
        let v = serde_json::to_value(Outcome::result("ab")).unwrap();
        assert_eq!(v, serde_json::json!({"kind": "Result", "value": "ab"}));
        let v = serde_json::to_value(Exit::Code(3)).unwrap();
        assert_eq!(v, serde_json::json!({"kind": "code", "code": 3}));
        assert_eq!(OutcomeKind::parse("runtime_crash"), Some(OutcomeKind::RuntimeCrash));
    }

    #[test]
    fn missing_executor() {
        let err = execute("/definitely/not/here --x", &BTreeMap::new(), 1000).unwrap_err();
        assert!(matches!(err, Error::ExecutorNotFound(_)));
    }

    #[test]
    fn captures_streams_and_codes() {
        let cap = execute("sh -c 'echo out; echo err >&2; exit 4'", &BTreeMap::new(), 5000).unwrap();
        assert_eq!(cap.exit, Exit::Code(4));
        assert_eq!(cap.stdout, b"out\n");
        assert_eq!(cap.stderr, b"err\n");
        let mut env = BTreeMap::new();
        env.insert("CLTEST_PROBE".to_owned(), "42".to_owned());
        let cap = execute("sh -c 'echo $CLTEST_PROBE'", &env, 5000).unwrap();
        assert_eq!(cap.stdout, b"42\n");
    }

    #[test]
    fn timeout_kills_process_group() {
        let start = Instant::now();
        let cap = execute("sh -c 'sleep 5; echo late'", &BTreeMap::new(), 200).unwrap();
        assert_eq!(cap.exit, Exit::TimedOut);
        assert!(cap.wall_ms >= 200, "wall {}", cap.wall_ms);
        assert!(start.elapsed() < Duration::from_millis(200 + KILL_GRACE_MS));
        assert!(cap.stdout.is_empty());
    }

    #[test]
    fn oversized_output_is_truncated_with_marker() {
        let cap = execute(
            "sh -c 'head -c 1100000 /dev/zero | tr \"\\0\" x'",
            &BTreeMap::new(),
            10_000,
        )
        .unwrap();
        assert!(cap.stdout.len() < CAPTURE_LIMIT + 100);
        let tail = String::from_utf8_lossy(&cap.stdout[CAPTURE_LIMIT..]).into_owned();
        assert!(tail.contains(TRUNCATION_MARKER), "{tail}");
        assert!(tail.contains(&format!("{} bytes omitted", 1_100_000 - CAPTURE_LIMIT)));
    }
}
