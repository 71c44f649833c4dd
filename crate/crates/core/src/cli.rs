//! The `cltest` command line.
//!
//! Exit status: 0 on success, 1 on user error (bad flags, unknown UIDs,
//! ordering mistakes such as reporting before classifying), 2 on internal
//! failures (I/O, corrupt JSON).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::corpus::{Corpus, TestFilter, TestMode};
use crate::error::{Error, Result};
use crate::minikernel::{self, fault::splitmix64, EvalParams};
use crate::oracle::{self, ReliabilityOptions};
use crate::report::{self, Format};
use crate::runner::{self, Configuration};
use crate::store::Repository;
use crate::uid::Uid;

#[derive(Debug, Parser)]
#[command(name = "cltest", version, about = "Differential and EMI compiler-testing campaigns")]
pub struct Cli {
    /// Repository directory.
    #[arg(long, global = true, default_value = "./ckrepo")]
    pub repo: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a repository (no-op if one already exists).
    Init,
    /// Generate minikernel tests.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long, value_parser = parse_mode)]
        mode: TestMode,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value = env!("CARGO_PKG_VERSION"))]
        generator_version: String,
    },
    /// Add dead-code variants of a base test.
    Emi {
        #[arg(long)]
        base: Uid,
        #[arg(long)]
        variants: usize,
        #[arg(long)]
        seed: u64,
        /// Thread count under which the injected code is dead.
        #[arg(long, default_value_t = 1)]
        threads: u32,
    },
    /// Register a configuration (an executor command template).
    AddConfig {
        #[arg(long)]
        name: String,
        /// Template with `{kernel}` and `{threads}` placeholders.
        #[arg(long)]
        cmd: String,
        #[arg(long, default_value_t = runner::DEFAULT_TIMEOUT_MS)]
        timeout_ms: u64,
        #[arg(long = "meta", value_parser = parse_kv)]
        meta: Vec<(String, String)>,
        #[arg(long = "env", value_parser = parse_kv)]
        env: Vec<(String, String)>,
    },
    /// Determinism screen: run each test R times on one configuration.
    Screen {
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value = "")]
        corpus_filter: String,
        #[arg(long, default_value_t = 1)]
        threads: u32,
        #[arg(long)]
        json: bool,
    },
    /// Reliability benchmark: run, classify and score every configuration.
    Bench {
        #[arg(long, default_value = "")]
        corpus_filter: String,
        #[arg(long, default_value_t = oracle::RELIABILITY_THRESHOLD)]
        threshold: f64,
        /// Comma-separated UIDs or names; all configurations by default.
        #[arg(long, default_value = "all")]
        configs: String,
        #[arg(long, default_value_t = 1)]
        threads: u32,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        include_timeouts: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a campaign over the active corpus.
    Run {
        /// Comma-separated UIDs or names, or `all`.
        #[arg(long)]
        configs: String,
        #[arg(long)]
        threads: u32,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "")]
        corpus_filter: String,
        #[arg(long)]
        label: Option<String>,
    },
    /// Compute and store verdicts for a campaign.
    Classify {
        #[arg(long)]
        campaign: Uid,
        #[arg(long)]
        json: bool,
    },
    /// Render the summary table of a classified campaign.
    Report {
        #[arg(long)]
        campaign: Uid,
        #[arg(long, default_value = "csv", value_parser = parse_format)]
        format: Format,
        #[arg(long)]
        view: Option<String>,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print (and with --execute, run and record) one test on one configuration.
    Rerun {
        #[arg(long)]
        test: Uid,
        #[arg(long)]
        config: String,
        #[arg(long)]
        threads: Option<u32>,
        #[arg(long)]
        campaign: Option<Uid>,
        #[arg(long)]
        execute: bool,
    },
    /// Invalidate a test (and the variants of a base).
    Invalidate {
        #[arg(long)]
        uid: Uid,
        #[arg(long)]
        reason: String,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TestMode, String> {
    TestMode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = TestMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown mode {s:?} (expected one of {})", names.join(", "))
    })
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

/// Parses `argv` (including the program name) and runs it. Output goes to
/// `out` and diagnostics to `err`; the return value is the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

fn params(threads: u32) -> Result<EvalParams> {
    EvalParams::new(threads)
}

pub fn lookup_config(repo: &Repository, key: &str) -> Result<Configuration> {
    if let Ok(uid) = Uid::parse(key) {
        match repo.config(&uid) {
            Ok(c) => return Ok(c),
            Err(Error::NotFound(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut matches: Vec<Configuration> = repo.configs()?.into_iter().filter(|c| c.name == key).collect();
    match matches.len() {
        1 => Ok(matches.remove(0)),
        0 => Err(Error::UnknownUid(key.to_owned())),
        _ => Err(Error::InvalidArgument(format!("configuration name {key:?} is ambiguous"))),
    }
}

pub fn select_configs(repo: &Repository, spec: &str) -> Result<Vec<Configuration>> {
    let configs = if spec.trim() == "all" {
        repo.configs()?
    } else {
        spec.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|k| lookup_config(repo, k))
            .collect::<Result<Vec<_>>>()?
    };
    if configs.is_empty() {
        return Err(Error::InvalidArgument("no configurations selected".into()));
    }
    Ok(configs)
}

fn print_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let root = &cli.repo;
    match &cli.command {
        Command::Init => {
            let repo = Repository::init(root)?;
            writeln!(out, "initialized {}", repo.root().display())?;
        }
        Command::Gen {
            count,
            mode,
            seed,
            size,
            generator_version,
        } => {
            if *size == 0 {
                return Err(Error::InvalidArgument("--size must be at least 1".into()));
            }
            let repo = Repository::open_writer(root)?;
            let mut corpus = Corpus::load(&repo)?;
            for i in 0..*count as u64 {
                let program = minikernel::generate_program(splitmix64(seed ^ splitmix64(i)), *size, *mode);
                let t = corpus.register_test(&minikernel::print(&program), *mode, generator_version, None)?;
                writeln!(out, "{}", t.uid)?;
            }
        }
        Command::Emi {
            base,
            variants,
            seed,
            threads,
        } => {
            let p = params(*threads)?;
            let repo = Repository::open_writer(root)?;
            let mut corpus = Corpus::load(&repo)?;
            let test = corpus.require(base)?.clone();
            let program = minikernel::parse(&repo.test_source(&test)?)?;
            let sources: Vec<String> = minikernel::make_variants(&program, &p, *variants, *seed)
                .iter()
                .map(minikernel::print)
                .collect();
            let before = corpus.variants_of(base).len();
            let family = corpus.create_family(base, &sources, p)?;
            for v in &family.variant_uids[before..] {
                writeln!(out, "{v}")?;
            }
        }
        Command::AddConfig {
            name,
            cmd,
            timeout_ms,
            meta,
            env,
        } => {
            let repo = Repository::open_writer(root)?;
            let mut config = Configuration::new(repo.new_uid(), name, cmd, *timeout_ms)?;
            config.metadata = meta.iter().cloned().collect();
            config.env = env.iter().cloned().collect();
            repo.put_config(&config)?;
            writeln!(out, "{}", config.uid)?;
        }
        Command::Screen {
            config,
            reps,
            corpus_filter,
            threads,
            json,
        } => {
            let p = params(*threads)?;
            let repo = Repository::open(root)?;
            let config = lookup_config(&repo, config)?;
            let corpus = Corpus::load(&repo)?;
            let tests = corpus.active_tests(&TestFilter::parse(corpus_filter)?);
            let mut flagged = Vec::new();
            for t in &tests {
                if !oracle::check_determinism(&repo, &t.uid, &config, &p, *reps)? {
                    flagged.push(t.uid.clone());
                }
            }
            let doc = json!({
                "config_uid": config.uid,
                "repetitions": reps,
                "tests": tests.len(),
                "deterministic": flagged.is_empty(),
                "nondeterministic_tests": flagged,
            });
            if *json {
                print_json(out, &doc)?;
            } else {
                writeln!(
                    out,
                    "{} ({}): {} of {} tests non-deterministic over {} runs",
                    config.name,
                    config.uid,
                    flagged.len(),
                    tests.len(),
                    reps
                )?;
                for u in &flagged {
                    writeln!(out, "  {u}")?;
                }
            }
        }
        Command::Bench {
            corpus_filter,
            threshold,
            configs,
            threads,
            parallel,
            include_timeouts,
            json,
        } => {
            let p = params(*threads)?;
            let repo = Repository::open_writer(root)?;
            let configs = select_configs(&repo, configs)?;
            let tests = Corpus::load(&repo)?.active_tests(&TestFilter::parse(corpus_filter)?);
            let campaign =
                runner::run_campaign_labeled(&repo, &tests, &configs, &p, *parallel, Some("bench".into()))?;
            let classified = oracle::classify_campaign(&repo, &campaign)?;
            let opts = ReliabilityOptions {
                threshold: *threshold,
                include_timeouts: *include_timeouts,
            };
            let reports = configs
                .iter()
                .map(|c| oracle::reliability_score_with(&c.uid, &classified.verdicts, opts))
                .collect::<Result<Vec<_>>>()?;
            if *json {
                print_json(out, &json!({ "campaign": campaign, "threshold": threshold, "reports": reports }))?;
            } else {
                writeln!(out, "campaign {campaign}")?;
                for (c, r) in configs.iter().zip(&reports) {
                    writeln!(
                        out,
                        "{} ({}): {}/{} = {:.4}{}",
                        c.name,
                        c.uid,
                        r.unreliable,
                        r.total,
                        r.fraction,
                        if r.below_threshold { "  BELOW THRESHOLD" } else { "" }
                    )?;
                }
            }
        }
        Command::Run {
            configs,
            threads,
            parallel,
            corpus_filter,
            label,
        } => {
            let p = params(*threads)?;
            let repo = Repository::open_writer(root)?;
            let configs = select_configs(&repo, configs)?;
            let tests = Corpus::load(&repo)?.active_tests(&TestFilter::parse(corpus_filter)?);
            let campaign = runner::run_campaign_labeled(&repo, &tests, &configs, &p, *parallel, label.clone())?;
            writeln!(out, "{campaign}")?;
        }
        Command::Classify { campaign, json } => {
            let repo = Repository::open_writer(root)?;
            let c = oracle::classify_campaign(&repo, campaign)?;
            if *json {
                print_json(out, &serde_json::to_value(&c)?)?;
            } else {
                let inconclusive = c.verdicts.iter().filter(|v| v.inconclusive).count();
                let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
                for v in &c.verdicts {
                    for l in v.per_config.values() {
                        *labels.entry(l.as_str()).or_default() += 1;
                    }
                }
                writeln!(out, "classified {} tests ({} inconclusive)", c.verdicts.len(), inconclusive)?;
                for (l, n) in labels {
                    writeln!(out, "  {l}: {n}")?;
                }
                let diverging: usize = c.emi.iter().map(|e| e.diverging_variants.len()).sum();
                if !c.emi.is_empty() {
                    writeln!(out, "EMI: {} family verdicts, {} diverging variants", c.emi.len(), diverging)?;
                }
            }
        }
        Command::Report {
            campaign,
            format,
            view,
            out: path,
        } => {
            let repo = Repository::open(root)?;
            let view = match view {
                Some(name) => Some(
                    repo.view(name)?
                        .ok_or_else(|| Error::NotFound(format!("view {name:?}")))?,
                ),
                None => None,
            };
            let table = report::summarize(&repo, campaign)?;
            let doc = report::render(&table, *format, view.as_ref());
            match path {
                Some(p) => std::fs::write(p, doc)?,
                None => out.write_all(&doc)?,
            }
        }
        Command::Rerun {
            test,
            config,
            threads,
            campaign,
            execute,
        } => {
            let repo = if *execute {
                Repository::open_writer(root)?
            } else {
                Repository::open(root)?
            };
            let config = lookup_config(&repo, config)?;
            let p = match (threads, campaign) {
                (Some(t), _) => params(*t)?,
                (None, Some(c)) => repo.campaign(c)?.params,
                (None, None) => params(1)?,
            };
            if *execute {
                let t = repo.test(test).map_err(|e| match e {
                    Error::NotFound(u) => Error::UnknownUid(u),
                    e => e,
                })?;
                let campaign = match campaign {
                    Some(c) => c.clone(),
                    None => runner::rerun_campaign(&repo, &p)?,
                };
                let rec = runner::run_one(&repo, &t, &config, &p, &campaign)?;
                writeln!(out, "{}", rec.command)?;
                let value = rec.outcome.value().map(|v| format!(" {v}")).unwrap_or_default();
                writeln!(out, "{}{} ({} ms, campaign {})", rec.outcome.kind().as_str(), value, rec.wall_ms, campaign)?;
            } else {
                writeln!(out, "{}", runner::rerun_command(&repo, test, &config.uid, &p)?)?;
            }
        }
        Command::Invalidate { uid, reason } => {
            let repo = Repository::open_writer(root)?;
            let mut corpus = Corpus::load(&repo)?;
            let n = corpus.invalidate(uid, reason)?;
            writeln!(out, "invalidated {n} test(s)")?;
        }
        Command::Serve { port } => {
            let repo = Repository::open_writer(root)?;
            crate::server::serve(repo, *port)?;
        }
    }
    Ok(())
}
