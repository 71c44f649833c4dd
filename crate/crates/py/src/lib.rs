//! Python bindings for cltest. Structured results are handed back as plain
//! Python objects (dicts and lists) built from their JSON form.

use std::collections::BTreeMap;

use cltest::corpus::{Corpus, TestFilter, TestMode};
use cltest::minikernel::{self, EvalParams, EvalResult, FaultProfile};
use cltest::oracle::{self, ReliabilityOptions};
use cltest::report::{self, Format};
use cltest::runner::{self, Configuration, Outcome};
use cltest::store::{QueryFilter, Repository};
use cltest::{Error, Uid};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(cltest_py, CltestError, PyException);

fn err(e: Error) -> PyErr {
    CltestError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| CltestError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn uid(s: &str) -> PyResult<Uid> {
    Uid::parse(s).map_err(err)
}

fn mode(s: &str) -> PyResult<TestMode> {
    TestMode::parse(s).ok_or_else(|| CltestError::new_err(format!("unknown test mode {s:?}")))
}

fn params(threads: u32) -> PyResult<EvalParams> {
    EvalParams::new(threads).map_err(err)
}

/// Generates a kernel and returns its source text.
#[pyfunction]
#[pyo3(signature = (seed, size, mode = "basic"))]
fn generate_program(seed: u64, size: usize, mode: &str) -> PyResult<String> {
    Ok(minikernel::print(&minikernel::generate_program(seed, size, self::mode(mode)?)))
}

/// Fault-free checksum of `source` at `threads` threads, as 8 hex digits.
#[pyfunction]
fn reference_checksum(source: &str, threads: u32) -> PyResult<String> {
    let program = minikernel::parse(source).map_err(err)?;
    Ok(minikernel::reference_checksum(&program, &params(threads)?).to_string())
}

/// Evaluates with a fault profile such as `"wrong-code:0.1"`. Returns the
/// checksum, or one of `"compile-crash"`, `"runtime-crash"`, `"timeout"`.
#[pyfunction]
#[pyo3(signature = (source, threads, fault = "none", seed = 0, subject = ""))]
fn evaluate(source: &str, threads: u32, fault: &str, seed: u64, subject: &str) -> PyResult<String> {
    let program = minikernel::parse(source).map_err(err)?;
    let fault = FaultProfile::parse(fault, seed).map_err(err)?;
    Ok(match minikernel::evaluate(&program, &params(threads)?, &fault, subject) {
        EvalResult::Ok(c) => c.to_string(),
        EvalResult::CompileCrash => "compile-crash".into(),
        EvalResult::RuntimeCrash => "runtime-crash".into(),
        EvalResult::Timeout => "timeout".into(),
    })
}

/// EMI variants of `source` for a `threads`-thread launch.
#[pyfunction]
fn make_variants(source: &str, threads: u32, count: usize, seed: u64) -> PyResult<Vec<String>> {
    let program = minikernel::parse(source).map_err(err)?;
    Ok(minikernel::make_variants(&program, &params(threads)?, count, seed)
        .iter()
        .map(minikernel::print)
        .collect())
}

/// Majority vote over `{config: outcome}`. An outcome is a result string,
/// or `None`/`"compile-crash"`/`"runtime-crash"`/`"timeout"`.
#[pyfunction]
fn majority_vote(py: Python<'_>, outcomes: BTreeMap<String, Option<String>>) -> PyResult<Py<PyAny>> {
    let map: BTreeMap<String, Outcome> = outcomes
        .into_iter()
        .map(|(k, v)| {
            let o = match v.as_deref() {
                Some("compile-crash") => Outcome::CompilerCrash,
                Some("runtime-crash") | None => Outcome::RuntimeCrash,
                Some("timeout") => Outcome::Timeout,
                Some(value) => Outcome::result(value),
            };
            (k, o)
        })
        .collect();
    let vote = oracle::majority_vote(&map).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "majority": vote.majority,
            "inconclusive": vote.inconclusive(),
            "labels": vote.labels,
        }),
    )
}

/// A repository opened for writing.
#[pyclass(module = "cltest_py")]
struct Repo {
    inner: Repository,
}

#[pymethods]
impl Repo {
    /// Opens `path`, creating the layout first when `create` is set.
    #[new]
    #[pyo3(signature = (path, create = true))]
    fn new(path: &str, create: bool) -> PyResult<Self> {
        let inner = if create { Repository::init(path) } else { Repository::open_writer(path) };
        Ok(Repo { inner: inner.map_err(err)? })
    }

    #[getter]
    fn root(&self) -> String {
        self.inner.root().display().to_string()
    }

    #[pyo3(signature = (count, mode = "basic", seed = 0, size = 20, generator_version = "1.0.0"))]
    fn gen(&self, count: u64, mode: &str, seed: u64, size: usize, generator_version: &str) -> PyResult<Vec<String>> {
        let mode = self::mode(mode)?;
        let mut corpus = Corpus::load(&self.inner).map_err(err)?;
        (0..count)
            .map(|i| {
                let s = minikernel::fault::splitmix64(seed ^ minikernel::fault::splitmix64(i));
                let src = minikernel::print(&minikernel::generate_program(s, size, mode));
                let t = corpus.register_test(&src, mode, generator_version, None).map_err(err)?;
                Ok(t.uid.to_string())
            })
            .collect()
    }

    /// Adds EMI variants to `base` and returns the new variant UIDs.
    #[pyo3(signature = (base, variants, seed = 0, threads = 1))]
    fn emi(&self, base: &str, variants: usize, seed: u64, threads: u32) -> PyResult<Vec<String>> {
        let base = uid(base)?;
        let p = params(threads)?;
        let mut corpus = Corpus::load(&self.inner).map_err(err)?;
        let test = corpus.require(&base).map_err(err)?.clone();
        let program = minikernel::parse(&self.inner.test_source(&test).map_err(err)?).map_err(err)?;
        let sources: Vec<String> = minikernel::make_variants(&program, &p, variants, seed)
            .iter()
            .map(minikernel::print)
            .collect();
        let before = corpus.variants_of(&base).len();
        let family = corpus.create_family(&base, &sources, p).map_err(err)?;
        Ok(family.variant_uids[before..].iter().map(|u| u.to_string()).collect())
    }

    #[pyo3(signature = (name, cmd, timeout_ms = 10_000, meta = None, env = None))]
    fn add_config(
        &self,
        name: &str,
        cmd: &str,
        timeout_ms: u64,
        meta: Option<BTreeMap<String, String>>,
        env: Option<BTreeMap<String, String>>,
    ) -> PyResult<String> {
        let mut config = Configuration::new(self.inner.new_uid(), name, cmd, timeout_ms).map_err(err)?;
        config.metadata = meta.unwrap_or_default();
        config.env = env.unwrap_or_default();
        self.inner.put_config(&config).map_err(err)?;
        Ok(config.uid.to_string())
    }

    fn tests(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.tests().map_err(err)?)
    }

    fn configs(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.configs().map_err(err)?)
    }

    fn invalidate(&self, uid: &str, reason: &str) -> PyResult<usize> {
        let uid = self::uid(uid)?;
        Corpus::load(&self.inner)
            .and_then(|mut c| c.invalidate(&uid, reason))
            .map_err(err)
    }

    /// Runs active tests against configurations (names, UIDs or `"all"`)
    /// and returns the campaign UID.
    #[pyo3(signature = (configs = "all", threads = 1, parallel = 1, corpus_filter = "", label = None))]
    fn run(
        &self,
        py: Python<'_>,
        configs: &str,
        threads: u32,
        parallel: usize,
        corpus_filter: &str,
        label: Option<String>,
    ) -> PyResult<String> {
        let p = params(threads)?;
        let repo = &self.inner;
        py.detach(|| {
            let configs = cltest::cli::select_configs(repo, configs)?;
            let tests = Corpus::load(repo)?.active_tests(&TestFilter::parse(corpus_filter)?);
            runner::run_campaign_labeled(repo, &tests, &configs, &p, parallel, label)
        })
        .map(|u| u.to_string())
        .map_err(err)
    }

    fn classify(&self, py: Python<'_>, campaign: &str) -> PyResult<Py<PyAny>> {
        let c = uid(campaign)?;
        let repo = &self.inner;
        let result = py.detach(|| oracle::classify_campaign(repo, &c)).map_err(err)?;
        to_py(py, &result)
    }

    /// Reliability of one configuration over a classified campaign.
    #[pyo3(signature = (campaign, config, threshold = oracle::RELIABILITY_THRESHOLD, include_timeouts = false))]
    fn reliability(
        &self,
        py: Python<'_>,
        campaign: &str,
        config: &str,
        threshold: f64,
        include_timeouts: bool,
    ) -> PyResult<Py<PyAny>> {
        let verdicts = self.inner.verdicts(&uid(campaign)?).map_err(err)?;
        let config = cltest::cli::lookup_config(&self.inner, config).map_err(err)?;
        let opts = ReliabilityOptions {
            threshold,
            include_timeouts,
        };
        to_py(py, &oracle::reliability_score_with(&config.uid, &verdicts, opts).map_err(err)?)
    }

    #[pyo3(signature = (campaign, format = "csv", view = None))]
    fn report(&self, campaign: &str, format: &str, view: Option<&str>) -> PyResult<String> {
        let format: Format = format.parse().map_err(err)?;
        let view = match view {
            Some(name) => Some(
                self.inner
                    .view(name)
                    .map_err(err)?
                    .ok_or_else(|| err(Error::NotFound(format!("view {name}"))))?,
            ),
            None => None,
        };
        let table = report::summarize(&self.inner, &uid(campaign)?).map_err(err)?;
        String::from_utf8(report::render(&table, format, view.as_ref()))
            .map_err(|e| CltestError::new_err(e.to_string()))
    }

    /// Execution records of a campaign, filtered by `test`, `config`,
    /// `outcome`, `mode` or `generator_version`. `config` also takes a name.
    #[pyo3(signature = (campaign, **filters))]
    fn executions(
        &self,
        py: Python<'_>,
        campaign: &str,
        filters: Option<BTreeMap<String, String>>,
    ) -> PyResult<Py<PyAny>> {
        let mut filter = QueryFilter::default();
        for (k, mut v) in filters.unwrap_or_default() {
            if k == "config" {
                v = cltest::cli::lookup_config(&self.inner, &v).map_err(err)?.uid.to_string();
            }
            filter = filter.with(&k, &v).map_err(err)?;
        }
        to_py(py, &self.inner.query(&uid(campaign)?, &filter).map_err(err)?)
    }

    #[pyo3(signature = (test, config, threads = 1))]
    fn rerun_command(&self, test: &str, config: &str, threads: u32) -> PyResult<String> {
        let config = cltest::cli::lookup_config(&self.inner, config).map_err(err)?;
        runner::rerun_command(&self.inner, &uid(test)?, &config.uid, &params(threads)?).map_err(err)
    }
}

#[pymodule]
fn cltest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CltestError", m.py().get_type::<CltestError>())?;
    m.add_function(wrap_pyfunction!(generate_program, m)?)?;
    m.add_function(wrap_pyfunction!(reference_checksum, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(make_variants, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_class::<Repo>()?;
    Ok(())
}
