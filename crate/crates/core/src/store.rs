//! The experiment repository.
//!
//! On-disk layout under the repository root:
//!
//! ```text
//! repo.json                             marker + format version
//! tests/<uid>/meta.json, kernel.mk      corpus entries (family.json on EMI bases)
//! configs/<uid>/meta.json               implementations under test
//! campaigns/<uid>/meta.json             campaign description
//! campaigns/<uid>/executions.jsonl      append-only execution log
//! campaigns/<uid>/payloads/*            captured output larger than 4 KiB
//! views/<uid>/meta.json                 named experiment views
//! verdicts/<campaign>/<test>.json       per-test classification
//! verdicts/<campaign>/emi/<base>-<config>.json
//! ```
//!
//! A repository has at most one writer at a time, arbitrated by a lock
//! file; any number of read-only handles may coexist with it.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::Mutex;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{TestCase, TestMode};
use crate::error::{Error, Result};
use crate::minikernel::EvalParams;
use crate::oracle::{EmiVerdict, Label, TestVerdict};
use crate::runner::{Configuration, ExecutionRecord, OutcomeKind};
use crate::uid::{Uid, UidSource};

pub const MARKER_FILE: &str = "repo.json";
pub const LOCK_FILE: &str = ".writer.lock";
pub const EXECUTION_LOG: &str = "executions.jsonl";
pub const QUARANTINE_SUFFIX: &str = ".quarantine";
/// Captured streams above this size are moved out of the log line.
pub const INLINE_LIMIT: usize = 4 * 1024;
pub const DEFAULT_VIEW: &str = "default";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Test,
    Config,
    Campaign,
    View,
}

impl EntryKind {
    pub const ALL: [EntryKind; 4] = [
        EntryKind::Test,
        EntryKind::Config,
        EntryKind::Campaign,
        EntryKind::View,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Test => "test",
            EntryKind::Config => "config",
            EntryKind::Campaign => "campaign",
            EntryKind::View => "view",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            EntryKind::Test => "tests",
            EntryKind::Config => "configs",
            EntryKind::Campaign => "campaigns",
            EntryKind::View => "views",
        }
    }

    pub fn parse(s: &str) -> Option<EntryKind> {
        EntryKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// A persisted object: `meta` is the JSON document in `meta.json`,
/// `payload_paths` the other files in the entry directory, relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub kind: EntryKind,
    pub uid: Uid,
    pub meta: Value,
    pub payload_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub kind: String,
    pub uid: Uid,
    pub created_at: DateTime<Utc>,
    pub test_uids: Vec<Uid>,
    pub config_uids: Vec<Uid>,
    pub params: EvalParams,
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A named selection of record columns plus default filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDef {
    #[serde(default = "view_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uid: Option<Uid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    pub name: String,
    pub columns: Vec<String>,
    #[serde(default)]
    pub filters: BTreeMap<String, String>,
}

fn view_kind() -> String {
    "view".into()
}

impl ViewDef {
    pub fn new(name: &str, columns: &[&str]) -> ViewDef {
        ViewDef {
            kind: view_kind(),
            uid: None,
            created_at: None,
            name: name.to_owned(),
            columns: columns.iter().map(|c| (*c).to_owned()).collect(),
            filters: BTreeMap::new(),
        }
    }

    pub fn default_view() -> ViewDef {
        ViewDef::new(
            DEFAULT_VIEW,
            &[
                "test_uid",
                "config_uid",
                "test.mode",
                "outcome.kind",
                "outcome.value",
                "verdict.label",
                "wall_ms",
            ],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(Error::SchemaViolation(format!("bad view name {:?}", self.name)));
        }
        if self.columns.is_empty() {
            return Err(Error::SchemaViolation("view has no columns".into()));
        }
        for c in &self.columns {
            if !is_valid_key_path(c) {
                return Err(Error::SchemaViolation(format!("unknown key path {c:?}")));
            }
        }
        for (k, v) in &self.filters {
            QueryFilter::default().with(k, v)?;
        }
        Ok(())
    }
}

/// Key paths a view may select from an execution record and its verdict.
pub const RECORD_KEY_PATHS: &[&str] = &[
    "test_uid",
    "config_uid",
    "campaign_id",
    "started_at",
    "wall_ms",
    "exit",
    "exit.kind",
    "exit.code",
    "exit.signal",
    "stdout",
    "stderr",
    "outcome",
    "outcome.kind",
    "outcome.value",
    "command",
    "verdict.label",
    "verdict.majority",
    "verdict.inconclusive",
    "test.mode",
    "test.generator_version",
    "test.family.base_uid",
    "test.family.variant_index",
    "config.name",
    "config.timeout_ms",
];

/// Columns of the mode × configuration summary table.
pub fn summary_key_paths() -> Vec<String> {
    let mut out = vec!["summary.total".to_owned()];
    for label in Label::ALL {
        out.push(format!("summary.{}", label.as_str()));
    }
    for mode in TestMode::ALL {
        for label in Label::ALL {
            out.push(format!("summary.{}.{}", mode.as_str(), label.as_str()));
        }
    }
    out
}

pub fn is_valid_key_path(path: &str) -> bool {
    if RECORD_KEY_PATHS.contains(&path) {
        return true;
    }
    if let Some(k) = path.strip_prefix("config.metadata.") {
        return !k.is_empty();
    }
    path.starts_with("summary.") && summary_key_paths().iter().any(|p| p == path)
}

/// Resolves a record key path against a record and its joined context.
/// Unknown or absent values resolve to `null`.
pub fn resolve_key_path(
    path: &str,
    record: &ExecutionRecord,
    verdict: Option<&TestVerdict>,
    test: Option<&TestCase>,
    config: Option<&Configuration>,
) -> Value {
    let rec = serde_json::to_value(record).unwrap_or(Value::Null);
    let lookup = |v: &Value, dotted: &str| -> Value {
        let mut cur = v;
        for part in dotted.split('.') {
            match cur.get(part) {
                Some(next) => cur = next,
                None => return Value::Null,
            }
        }
        cur.clone()
    };
    match path.split_once('.') {
        Some(("verdict", rest)) => match (verdict, rest) {
            (Some(v), "label") => v
                .per_config
                .get(&record.config_uid)
                .map_or(Value::Null, |l| json!(l)),
            (Some(v), "majority") => json!(v.majority),
            (Some(v), "inconclusive") => json!(v.inconclusive),
            _ => Value::Null,
        },
        Some(("test", rest)) => test
            .and_then(|t| serde_json::to_value(t).ok())
            .map_or(Value::Null, |t| lookup(&t, rest)),
        Some(("config", rest)) => config
            .and_then(|c| serde_json::to_value(c).ok())
            .map_or(Value::Null, |c| lookup(&c, rest)),
        _ => lookup(&rec, path),
    }
}

/// Predicate over execution records. `outcome` matches either an outcome
/// kind (`Result`, `CompilerCrash`, `RuntimeCrash`, `Timeout`) or a verdict
/// label (`Correct`, `WrongCode`, `Inconclusive`, ...), the latter joined
/// through the campaign's persisted verdicts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFilter {
    pub test: Option<Uid>,
    pub config: Option<Uid>,
    pub outcome: Option<OutcomeFilter>,
    pub mode: Option<TestMode>,
    pub generator_version: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeFilter {
    Kind(OutcomeKind),
    Label(Label),
}

impl OutcomeFilter {
    pub fn parse(s: &str) -> Result<OutcomeFilter> {
        if let Some(k) = OutcomeKind::parse(s) {
            return Ok(OutcomeFilter::Kind(k));
        }
        if let Some(l) = Label::parse(s) {
            return Ok(OutcomeFilter::Label(l));
        }
        Err(Error::InvalidArgument(format!("unknown outcome {s:?}")))
    }
}

impl QueryFilter {
    /// Sets one filter field from its string form (`test`, `config`,
    /// `outcome`, `mode`, `generator_version`).
    pub fn with(mut self, key: &str, value: &str) -> Result<QueryFilter> {
        match key {
            "test" => self.test = Some(Uid::parse(value)?),
            "config" => self.config = Some(Uid::parse(value)?),
            "outcome" => self.outcome = Some(OutcomeFilter::parse(value)?),
            "mode" => {
                self.mode = Some(
                    TestMode::parse(value)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {value:?}")))?,
                )
            }
            "generator_version" => self.generator_version = Some(value.to_owned()),
            _ => return Err(Error::InvalidArgument(format!("unknown filter key {key:?}"))),
        }
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        *self == QueryFilter::default()
    }

    fn needs_tests(&self) -> bool {
        self.mode.is_some() || self.generator_version.is_some()
    }

    /// Evaluates the predicate given the joined context.
    pub fn matches(
        &self,
        record: &ExecutionRecord,
        test: Option<&TestCase>,
        verdict: Option<&TestVerdict>,
    ) -> bool {
        if self.test.as_ref().is_some_and(|t| *t != record.test_uid) {
            return false;
        }
        if self.config.as_ref().is_some_and(|c| *c != record.config_uid) {
            return false;
        }
        match self.outcome {
            Some(OutcomeFilter::Kind(k)) if record.outcome.kind() != k => return false,
            Some(OutcomeFilter::Label(l)) => {
                let label = verdict.and_then(|v| v.per_config.get(&record.config_uid));
                if label != Some(&l) {
                    return false;
                }
            }
            _ => {}
        }
        if let Some(mode) = self.mode {
            if test.map(|t| t.mode) != Some(mode) {
                return false;
            }
        }
        if let Some(gv) = &self.generator_version {
            if test.map(|t| t.generator_version.as_str()) != Some(gv.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug)]
struct WriterLock {
    path: PathBuf,
}

impl WriterLock {
    fn acquire(root: &Path) -> Result<WriterLock> {
        let path = root.join(LOCK_FILE);
        for attempt in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(WriterLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid = holder.trim().parse::<u32>().ok();
                    let stale = pid.is_some_and(|p| !Path::new(&format!("/proc/{p}")).exists());
                    if stale && attempt == 0 {
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    return Err(Error::Locked(format!(
                        "{} held by pid {}",
                        path.display(),
                        holder.trim()
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Locked(path.display().to_string()))
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct Repository {
    root: PathBuf,
    writer: Option<WriterLock>,
    uids: Mutex<UidSource>,
    log_lock: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn is_safe_relative(p: &str) -> bool {
    let path = Path::new(p);
    !p.is_empty()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
}

impl Repository {
    /// Creates the repository layout if absent and opens it for writing.
    /// Re-initialising a valid repository changes nothing.
    pub fn init(root: impl AsRef<Path>) -> Result<Repository> {
        let root = root.as_ref().to_path_buf();
        let marker = root.join(MARKER_FILE);
        if root.exists() && !marker.exists() && fs::read_dir(&root)?.next().is_some() {
            return Err(Error::NotARepository(root));
        }
        fs::create_dir_all(&root)?;
        if !marker.exists() {
            write_json(
                &marker,
                &json!({"format": "cltest-repo", "version": FORMAT_VERSION}),
            )?;
        }
        let repo = Repository::open_writer(&root)?;
        for kind in EntryKind::ALL {
            fs::create_dir_all(root.join(kind.dir_name()))?;
        }
        fs::create_dir_all(root.join("verdicts"))?;
        if repo.view(DEFAULT_VIEW)?.is_none() {
            repo.put_view(ViewDef::default_view())?;
        }
        Ok(repo)
    }

    /// Read-only handle.
    pub fn open(root: impl AsRef<Path>) -> Result<Repository> {
        let root = Self::check_marker(root.as_ref())?;
        Ok(Repository {
            root,
            writer: None,
            uids: Mutex::new(UidSource::from_entropy()),
            log_lock: Mutex::new(()),
        })
    }

    /// Writer handle; fails fast if another writer holds the lock. Torn
    /// final lines in execution logs are quarantined.
    pub fn open_writer(root: impl AsRef<Path>) -> Result<Repository> {
        let root = Self::check_marker(root.as_ref())?;
        let lock = WriterLock::acquire(&root)?;
        let repo = Repository {
            root,
            writer: Some(lock),
            uids: Mutex::new(UidSource::from_entropy()),
            log_lock: Mutex::new(()),
        };
        for campaign in repo.list(EntryKind::Campaign)? {
            repo.recover_log(&campaign)?;
        }
        Ok(repo)
    }

    /// Returns the absolute root, so rendered kernel paths work from any
    /// working directory.
    fn check_marker(root: &Path) -> Result<PathBuf> {
        let marker = root.join(MARKER_FILE);
        let ok = fs::read(&marker)
            .ok()
            .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
            .is_some_and(|v| v["format"] == "cltest-repo");
        if ok {
            Ok(root.canonicalize()?)
        } else {
            Err(Error::NotARepository(root.to_path_buf()))
        }
    }

    pub fn with_uid_source(self, source: UidSource) -> Repository {
        *self.uids.lock().expect("uid lock") = source;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_writer(&self) -> bool {
        self.writer.is_some()
    }

    fn require_writer(&self) -> Result<()> {
        if self.writer.is_some() {
            Ok(())
        } else {
            Err(Error::ReadOnly)
        }
    }

    pub fn entry_dir(&self, kind: EntryKind, uid: &Uid) -> PathBuf {
        self.root.join(kind.dir_name()).join(uid.as_str())
    }

    fn uid_taken(&self, uid: &Uid) -> bool {
        EntryKind::ALL
            .iter()
            .any(|k| self.entry_dir(*k, uid).exists())
    }

    /// A fresh UID not used by any entry of any kind.
    pub fn new_uid(&self) -> Uid {
        let mut src = self.uids.lock().expect("uid lock");
        loop {
            let uid = src.draw();
            if !self.uid_taken(&uid) {
                return uid;
            }
        }
    }

    fn validate_meta(kind: EntryKind, uid: &Uid, meta: &Value) -> Result<()> {
        let obj = meta
            .as_object()
            .ok_or_else(|| Error::SchemaViolation("meta must be a JSON object".into()))?;
        if obj.get("kind").and_then(Value::as_str) != Some(kind.as_str()) {
            return Err(Error::SchemaViolation(format!(
                "meta.kind must be {:?}",
                kind.as_str()
            )));
        }
        if obj.get("uid").and_then(Value::as_str) != Some(uid.as_str()) {
            return Err(Error::SchemaViolation("meta.uid must match entry uid".into()));
        }
        let created = obj.get("created_at").and_then(Value::as_str).unwrap_or("");
        if DateTime::parse_from_rfc3339(created).is_err() {
            return Err(Error::SchemaViolation(
                "meta.created_at must be an RFC 3339 timestamp".into(),
            ));
        }
        let typed = |e: serde_json::Error| Error::SchemaViolation(format!("{} meta: {e}", kind.as_str()));
        match kind {
            EntryKind::Test => serde_json::from_value::<TestCase>(meta.clone())
                .map_err(typed)?
                .validate(),
            EntryKind::Config => serde_json::from_value::<Configuration>(meta.clone())
                .map_err(typed)?
                .validate(),
            EntryKind::Campaign => serde_json::from_value::<CampaignMeta>(meta.clone())
                .map(|_| ())
                .map_err(typed),
            EntryKind::View => serde_json::from_value::<ViewDef>(meta.clone())
                .map_err(typed)?
                .validate(),
        }
    }

    /// Writes `meta.json` for an entry after checking it against the kind's
    /// schema. Payload files are written separately.
    pub fn put_entry(&self, entry: &RepoEntry) -> Result<()> {
        self.require_writer()?;
        Self::validate_meta(entry.kind, &entry.uid, &entry.meta)?;
        for p in &entry.payload_paths {
            if !is_safe_relative(p) || p == "meta.json" {
                return Err(Error::SchemaViolation(format!("payload path {p:?} escapes entry")));
            }
        }
        let dir = self.entry_dir(entry.kind, &entry.uid);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("meta.json"), &entry.meta)
    }

    pub fn get_entry_of(&self, kind: EntryKind, uid: &Uid) -> Result<RepoEntry> {
        let dir = self.entry_dir(kind, uid);
        let meta_path = dir.join("meta.json");
        if !meta_path.exists() {
            return Err(Error::NotFound(uid.to_string()));
        }
        let meta: Value = read_json(&meta_path)?;
        let mut payload_paths = Vec::new();
        collect_files(&dir, &dir, &mut payload_paths)?;
        payload_paths.retain(|p| p != "meta.json");
        payload_paths.sort();
        Ok(RepoEntry {
            kind,
            uid: uid.clone(),
            meta,
            payload_paths,
        })
    }

    /// Looks an entry up by UID across all kinds.
    pub fn get_entry(&self, uid: &Uid) -> Result<RepoEntry> {
        for kind in EntryKind::ALL {
            if self.entry_dir(kind, uid).join("meta.json").exists() {
                return self.get_entry_of(kind, uid);
            }
        }
        Err(Error::NotFound(uid.to_string()))
    }

    /// UIDs of all entries of `kind`, sorted.
    pub fn list(&self, kind: EntryKind) -> Result<Vec<Uid>> {
        let dir = self.root.join(kind.dir_name());
        let mut out = Vec::new();
        if !dir.exists() {
            return Ok(out);
        }
        for ent in fs::read_dir(dir)? {
            let ent = ent?;
            if let Some(name) = ent.file_name().to_str() {
                if let Ok(uid) = Uid::parse(name) {
                    if ent.path().join("meta.json").exists() {
                        out.push(uid);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn write_payload(&self, kind: EntryKind, uid: &Uid, rel: &str, bytes: &[u8]) -> Result<()> {
        self.require_writer()?;
        if !is_safe_relative(rel) {
            return Err(Error::SchemaViolation(format!("payload path {rel:?} escapes entry")));
        }
        let path = self.entry_dir(kind, uid).join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)
    }

    pub fn read_payload(&self, kind: EntryKind, uid: &Uid, rel: &str) -> Result<Vec<u8>> {
        if !is_safe_relative(rel) {
            return Err(Error::SchemaViolation(format!("payload path {rel:?} escapes entry")));
        }
        let path = self.entry_dir(kind, uid).join(rel);
        fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("{uid}/{rel}")),
            _ => e.into(),
        })
    }

    fn put_typed<T: Serialize>(&self, kind: EntryKind, uid: &Uid, value: &T) -> Result<()> {
        self.put_entry(&RepoEntry {
            kind,
            uid: uid.clone(),
            meta: serde_json::to_value(value)?,
            payload_paths: Vec::new(),
        })
    }

    fn get_typed<T: for<'de> Deserialize<'de>>(&self, kind: EntryKind, uid: &Uid) -> Result<T> {
        let path = self.entry_dir(kind, uid).join("meta.json");
        if !path.exists() {
            return Err(Error::NotFound(uid.to_string()));
        }
        read_json(&path)
    }

    // -- tests -----------------------------------------------------------

    pub fn put_test(&self, test: &TestCase) -> Result<()> {
        self.put_typed(EntryKind::Test, &test.uid, test)
    }

    pub fn test(&self, uid: &Uid) -> Result<TestCase> {
        self.get_typed(EntryKind::Test, uid)
    }

    pub fn tests(&self) -> Result<Vec<TestCase>> {
        self.list(EntryKind::Test)?
            .iter()
            .map(|u| self.test(u))
            .collect()
    }

    /// Path of a test's kernel, as used on executor command lines.
    pub fn kernel_path(&self, test: &TestCase) -> PathBuf {
        self.entry_dir(EntryKind::Test, &test.uid).join(&test.source_ref)
    }

    pub fn test_source(&self, test: &TestCase) -> Result<String> {
        let bytes = self.read_payload(EntryKind::Test, &test.uid, &test.source_ref)?;
        String::from_utf8(bytes).map_err(|e| Error::SchemaViolation(e.to_string()))
    }

    // -- configs ---------------------------------------------------------

    pub fn put_config(&self, config: &Configuration) -> Result<()> {
        self.put_typed(EntryKind::Config, &config.uid, config)
    }

    pub fn config(&self, uid: &Uid) -> Result<Configuration> {
        self.get_typed(EntryKind::Config, uid)
    }

    pub fn configs(&self) -> Result<Vec<Configuration>> {
        self.list(EntryKind::Config)?
            .iter()
            .map(|u| self.config(u))
            .collect()
    }

    // -- campaigns -------------------------------------------------------

    pub fn create_campaign(
        &self,
        test_uids: Vec<Uid>,
        config_uids: Vec<Uid>,
        params: EvalParams,
        parallelism: usize,
        label: Option<String>,
    ) -> Result<CampaignMeta> {
        let meta = CampaignMeta {
            kind: "campaign".into(),
            uid: self.new_uid(),
            created_at: Utc::now(),
            test_uids,
            config_uids,
            params,
            parallelism,
            label,
        };
        self.put_typed(EntryKind::Campaign, &meta.uid, &meta)?;
        File::create(self.log_path(&meta.uid))?;
        Ok(meta)
    }

    pub fn campaign(&self, uid: &Uid) -> Result<CampaignMeta> {
        self.get_typed(EntryKind::Campaign, uid).map_err(|e| match e {
            Error::NotFound(_) => Error::UnknownCampaign(uid.to_string()),
            e => e,
        })
    }

    pub fn campaigns(&self) -> Result<Vec<CampaignMeta>> {
        self.list(EntryKind::Campaign)?
            .iter()
            .map(|u| self.campaign(u))
            .collect()
    }

    fn log_path(&self, campaign: &Uid) -> PathBuf {
        self.entry_dir(EntryKind::Campaign, campaign).join(EXECUTION_LOG)
    }

    fn require_campaign(&self, campaign: &Uid) -> Result<()> {
        if self
            .entry_dir(EntryKind::Campaign, campaign)
            .join("meta.json")
            .exists()
        {
            Ok(())
        } else {
            Err(Error::UnknownCampaign(campaign.to_string()))
        }
    }

    /// Moves a torn (unterminated or unparsable) final line of a campaign
    /// log to `executions.jsonl.quarantine` and truncates the log to the
    /// last complete record. Returns whether anything was quarantined.
    pub fn recover_log(&self, campaign: &Uid) -> Result<bool> {
        self.require_writer()?;
        let path = self.log_path(campaign);
        let Ok(mut f) = OpenOptions::new().read(true).write(true).open(&path) else {
            return Ok(false);
        };
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if bytes.is_empty() {
            return Ok(false);
        }
        let body_end = if bytes.ends_with(b"\n") {
            bytes.len() - 1
        } else {
            bytes.len()
        };
        let last_start = bytes[..body_end]
            .iter()
            .rposition(|b| *b == b'\n')
            .map_or(0, |i| i + 1);
        let last = &bytes[last_start..];
        let complete = last.ends_with(b"\n")
            && serde_json::from_slice::<Value>(&last[..last.len() - 1]).is_ok();
        if complete {
            return Ok(false);
        }
        let mut q = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.with_file_name(format!("{EXECUTION_LOG}{QUARANTINE_SUFFIX}")))?;
        q.write_all(last)?;
        if !last.ends_with(b"\n") {
            q.write_all(b"\n")?;
        }
        f.set_len(last_start as u64)?;
        f.seek(SeekFrom::End(0))?;
        Ok(true)
    }

    fn stored_blob(&self, campaign: &Uid, stream: &str, bytes: &[u8]) -> Result<Value> {
        if bytes.len() <= INLINE_LIMIT {
            return Ok(blob_to_json(bytes));
        }
        let name = format!("payloads/{}.{stream}", self.new_uid());
        self.write_payload(EntryKind::Campaign, campaign, &name, bytes)?;
        Ok(json!({"file": name, "len": bytes.len()}))
    }

    /// Appends one record as a single JSON line. Earlier lines are never
    /// rewritten.
    pub fn append_execution(&self, campaign: &Uid, record: &ExecutionRecord) -> Result<()> {
        self.require_writer()?;
        self.require_campaign(campaign)?;
        let mut value = serde_json::to_value(record)?;
        value["stdout"] = self.stored_blob(campaign, "stdout", &record.stdout)?;
        value["stderr"] = self.stored_blob(campaign, "stderr", &record.stderr)?;
        let mut line = serde_json::to_vec(&value)?;
        line.push(b'\n');
        let _guard = self.log_lock.lock().expect("log lock");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path(campaign))?;
        f.write_all(&line)?;
        f.flush()?;
        Ok(())
    }

    fn load_blob(&self, campaign: &Uid, v: &Value) -> Result<Vec<u8>> {
        if let Some(file) = v.get("file").and_then(Value::as_str) {
            return self.read_payload(EntryKind::Campaign, campaign, file);
        }
        blob_from_json(v)
    }

    /// Every record of a campaign in append order. A torn final line is
    /// skipped (a writer quarantines it on open).
    pub fn executions(&self, campaign: &Uid) -> Result<Vec<ExecutionRecord>> {
        self.require_campaign(campaign)?;
        let path = self.log_path(campaign);
        let f = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let lines: Vec<String> = BufReader::new(f).lines().collect::<std::io::Result<_>>()?;
        let mut out = Vec::with_capacity(lines.len());
        let n = lines.len();
        for (i, line) in lines.into_iter().enumerate() {
            let mut value: Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(_) if i + 1 == n => break,
                Err(e) => return Err(e.into()),
            };
            let stdout = self.load_blob(campaign, &value["stdout"])?;
            let stderr = self.load_blob(campaign, &value["stderr"])?;
            value["stdout"] = Value::String(String::new());
            value["stderr"] = Value::String(String::new());
            let mut rec: ExecutionRecord = serde_json::from_value(value)?;
            rec.stdout = stdout;
            rec.stderr = stderr;
            out.push(rec);
        }
        Ok(out)
    }

    /// Records of `campaign` matching `filter`, in append order.
    pub fn query(&self, campaign: &Uid, filter: &QueryFilter) -> Result<Vec<ExecutionRecord>> {
        let records = self.executions(campaign)?;
        let verdicts: HashMap<Uid, TestVerdict> = if matches!(filter.outcome, Some(OutcomeFilter::Label(_))) {
            self.verdicts(campaign)?
                .into_iter()
                .map(|v| (v.test_uid.clone(), v))
                .collect()
        } else {
            HashMap::new()
        };
        let mut tests: HashMap<Uid, Option<TestCase>> = HashMap::new();
        let mut out = Vec::new();
        for r in records {
            let test = if filter.needs_tests() {
                tests
                    .entry(r.test_uid.clone())
                    .or_insert_with(|| self.test(&r.test_uid).ok())
                    .as_ref()
            } else {
                None
            };
            if filter.matches(&r, test, verdicts.get(&r.test_uid)) {
                out.push(r);
            }
        }
        Ok(out)
    }

    // -- verdicts --------------------------------------------------------

    fn verdict_dir(&self, campaign: &Uid) -> PathBuf {
        self.root.join("verdicts").join(campaign.as_str())
    }

    pub fn put_verdict(&self, campaign: &Uid, verdict: &TestVerdict) -> Result<()> {
        self.require_writer()?;
        self.require_campaign(campaign)?;
        let dir = self.verdict_dir(campaign);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join(format!("{}.json", verdict.test_uid)), verdict)
    }

    pub fn has_verdicts(&self, campaign: &Uid) -> bool {
        self.verdict_dir(campaign).exists()
    }

    /// Persisted verdicts of a campaign, sorted by test UID.
    pub fn verdicts(&self, campaign: &Uid) -> Result<Vec<TestVerdict>> {
        self.require_campaign(campaign)?;
        let dir = self.verdict_dir(campaign);
        let mut out = Vec::new();
        if !dir.exists() {
            return Ok(out);
        }
        for ent in fs::read_dir(&dir)? {
            let path = ent?.path();
            if path.extension().is_some_and(|e| e == "json") && path.is_file() {
                out.push(read_json::<TestVerdict>(&path)?);
            }
        }
        out.sort_by(|a, b| a.test_uid.cmp(&b.test_uid));
        Ok(out)
    }

    pub fn put_emi_verdict(&self, campaign: &Uid, verdict: &EmiVerdict) -> Result<()> {
        self.require_writer()?;
        self.require_campaign(campaign)?;
        let dir = self.verdict_dir(campaign).join("emi");
        fs::create_dir_all(&dir)?;
        write_json(
            &dir.join(format!("{}-{}.json", verdict.base_uid, verdict.config_uid)),
            verdict,
        )
    }

    pub fn emi_verdicts(&self, campaign: &Uid) -> Result<Vec<EmiVerdict>> {
        self.require_campaign(campaign)?;
        let dir = self.verdict_dir(campaign).join("emi");
        let mut out = Vec::new();
        if !dir.exists() {
            return Ok(out);
        }
        for ent in fs::read_dir(&dir)? {
            let path = ent?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(read_json::<EmiVerdict>(&path)?);
            }
        }
        out.sort_by(|a, b| (&a.base_uid, &a.config_uid).cmp(&(&b.base_uid, &b.config_uid)));
        Ok(out)
    }

    // -- views -----------------------------------------------------------

    /// Saves a view, replacing any existing view of the same name.
    pub fn put_view(&self, mut view: ViewDef) -> Result<ViewDef> {
        view.validate()?;
        let existing = self.view(&view.name)?;
        view.kind = view_kind();
        view.uid = Some(match (&existing, &view.uid) {
            (Some(e), _) => e.uid.clone().expect("stored views carry a uid"),
            (None, Some(u)) if !self.uid_taken(u) => u.clone(),
            _ => self.new_uid(),
        });
        view.created_at = Some(existing.and_then(|e| e.created_at).unwrap_or_else(Utc::now));
        let uid = view.uid.clone().expect("set above");
        self.put_typed(EntryKind::View, &uid, &view)?;
        Ok(view)
    }

    pub fn view(&self, name: &str) -> Result<Option<ViewDef>> {
        Ok(self.views()?.into_iter().find(|v| v.name == name))
    }

    /// All views, sorted by name.
    pub fn views(&self) -> Result<Vec<ViewDef>> {
        let mut out: Vec<ViewDef> = self
            .list(EntryKind::View)?
            .iter()
            .map(|u| self.get_typed(EntryKind::View, u))
            .collect::<Result<_>>()?;
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for ent in fs::read_dir(dir)? {
        let path = ent?.path();
        if path.is_dir() {
            collect_files(base, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(base) {
            out.push(rel.to_string_lossy().into_owned());
        }
    }
    Ok(())
}

/// UTF-8 text as a JSON string, anything else as `{"base64": ...}`.
pub fn blob_to_json(bytes: &[u8]) -> Value {
    match std::str::from_utf8(bytes) {
        Ok(s) => Value::String(s.to_owned()),
        Err(_) => json!({"base64": base64::engine::general_purpose::STANDARD.encode(bytes)}),
    }
}

pub fn blob_from_json(v: &Value) -> Result<Vec<u8>> {
    match v {
        Value::String(s) => Ok(s.as_bytes().to_vec()),
        Value::Null => Ok(Vec::new()),
        _ => {
            let b64 = v
                .get("base64")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::SchemaViolation("bad captured-output field".into()))?;
            base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| Error::SchemaViolation(e.to_string()))
        }
    }
}

/// serde adapter for captured output fields.
pub(crate) mod blob {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        super::blob_to_json(bytes).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let v = Value::deserialize(d)?;
        super::blob_from_json(&v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{Exit, Outcome};

    fn fresh() -> (tempfile::TempDir, Repository) {
        let dir = tempfile::tempdir().unwrap();
        let repo = Repository::init(dir.path().join("repo")).unwrap();
        (dir, repo)
    }

    fn config(repo: &Repository) -> Configuration {
        let mut c = Configuration::new(repo.new_uid(), "ref", "mk-eval {kernel} --threads {threads}", 1000)
            .unwrap();
        c.metadata.insert("device_name".into(), "desk".into());
        c.env.insert("A".into(), "1".into());
        c
    }

    fn record(campaign: &Uid, test: &Uid, config: &Uid, value: &str) -> ExecutionRecord {
        ExecutionRecord {
            test_uid: test.clone(),
            config_uid: config.clone(),
            campaign_id: campaign.clone(),
            started_at: Utc::now(),
            wall_ms: 3,
            exit: Exit::Code(0),
            stdout: format!("RESULT: {value}\n").into_bytes(),
            stderr: Vec::new(),
            outcome: Outcome::Result {
                value: value.into(),
            },
            command: "mk-eval x".into(),
        }
    }

    #[test]
    fn config_round_trip() {
        let (_d, repo) = fresh();
        let c = config(&repo);
        repo.put_config(&c).unwrap();
        assert_eq!(repo.config(&c.uid).unwrap(), c);
        let e = repo.get_entry(&c.uid).unwrap();
        assert_eq!(e.kind, EntryKind::Config);
        assert_eq!(e.meta, serde_json::to_value(&c).unwrap());
    }

    #[test]
    fn get_on_fresh_repo_is_not_found() {
        let (_d, repo) = fresh();
        assert!(matches!(
            repo.get_entry(&Uid::from_u64(1)),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn malformed_uid_is_a_schema_violation() {
        let (_d, repo) = fresh();
        let c = config(&repo);
        let mut meta = serde_json::to_value(&c).unwrap();
        meta["uid"] = json!("NOT-A-UID");
        let err = repo
            .put_entry(&RepoEntry {
                kind: EntryKind::Config,
                uid: c.uid.clone(),
                meta,
                payload_paths: vec![],
            })
            .unwrap_err();
        assert!(matches!(err, Error::SchemaViolation(_)));
    }

    #[test]
    fn meta_must_carry_kind_and_timestamp() {
        let (_d, repo) = fresh();
        let c = config(&repo);
        let mut meta = serde_json::to_value(&c).unwrap();
        meta["created_at"] = json!("yesterday");
        let e = RepoEntry {
            kind: EntryKind::Config,
            uid: c.uid.clone(),
            meta,
            payload_paths: vec![],
        };
        assert!(matches!(repo.put_entry(&e), Err(Error::SchemaViolation(_))));
        let mut wrong_kind = e.clone();
        wrong_kind.meta = serde_json::to_value(&c).unwrap();
        wrong_kind.kind = EntryKind::Test;
        assert!(matches!(repo.put_entry(&wrong_kind), Err(Error::SchemaViolation(_))));
        let mut escape = e;
        escape.meta = serde_json::to_value(&c).unwrap();
        escape.payload_paths = vec!["../x".into()];
        assert!(matches!(repo.put_entry(&escape), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn init_is_idempotent_and_ships_default_view() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("r");
        drop(Repository::init(&root).unwrap());
        let repo = Repository::init(&root).unwrap();
        let views = repo.views().unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].name, DEFAULT_VIEW);
    }

    #[test]
    fn init_refuses_foreign_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("stuff.txt"), "x").unwrap();
        assert!(matches!(
            Repository::init(dir.path()),
            Err(Error::NotARepository(_))
        ));
    }

    #[test]
    fn second_writer_fails_fast() {
        let (d, repo) = fresh();
        let root = d.path().join("repo");
        assert!(matches!(Repository::open_writer(&root), Err(Error::Locked(_))));
        let reader = Repository::open(&root).unwrap();
        assert!(matches!(
            reader.put_config(&config(&repo)),
            Err(Error::ReadOnly)
        ));
        drop(repo);
        Repository::open_writer(&root).unwrap();
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let (d, repo) = fresh();
        let root = d.path().join("repo");
        drop(repo);
        fs::write(root.join(LOCK_FILE), "4000000000\n").unwrap();
        Repository::open_writer(&root).unwrap();
    }

    #[test]
    fn journal_keeps_duplicates_in_order() {
        let (_d, repo) = fresh();
        let t = Uid::from_u64(7);
        let c = Uid::from_u64(8);
        let camp = repo
            .create_campaign(vec![t.clone()], vec![c.clone()], EvalParams::new(4).unwrap(), 1, None)
            .unwrap();
        let r = record(&camp.uid, &t, &c, "00ff00ff");
        repo.append_execution(&camp.uid, &r).unwrap();
        repo.append_execution(&camp.uid, &r).unwrap();
        let got = repo.executions(&camp.uid).unwrap();
        assert_eq!(got, vec![r.clone(), r]);
        let text = fs::read_to_string(repo.log_path(&camp.uid)).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn unknown_campaign() {
        let (_d, repo) = fresh();
        let u = Uid::from_u64(99);
        let r = record(&u, &u, &u, "00");
        assert!(matches!(
            repo.append_execution(&u, &r),
            Err(Error::UnknownCampaign(_))
        ));
        assert!(matches!(
            repo.query(&u, &QueryFilter::default()),
            Err(Error::UnknownCampaign(_))
        ));
    }

    #[test]
    fn large_and_binary_output_round_trip() {
        let (_d, repo) = fresh();
        let t = Uid::from_u64(7);
        let c = Uid::from_u64(8);
        let camp = repo
            .create_campaign(vec![], vec![], EvalParams::new(1).unwrap(), 1, None)
            .unwrap();
        let mut r = record(&camp.uid, &t, &c, "01");
        r.stdout = vec![b'x'; INLINE_LIMIT + 10];
        r.stderr = vec![0xff, 0x00, 0xfe];
        repo.append_execution(&camp.uid, &r).unwrap();
        let line = fs::read_to_string(repo.log_path(&camp.uid)).unwrap();
        assert!(line.len() < INLINE_LIMIT, "large stdout stays out of the log");
        assert!(line.contains("base64"));
        assert_eq!(repo.executions(&camp.uid).unwrap(), vec![r]);
        let entry = repo.get_entry(&camp.uid).unwrap();
        assert!(entry.payload_paths.iter().any(|p| p.starts_with("payloads/")));
    }

    #[test]
    fn torn_final_line_is_quarantined() {
        let (d, repo) = fresh();
        let t = Uid::from_u64(7);
        let c = Uid::from_u64(8);
        let camp = repo
            .create_campaign(vec![], vec![], EvalParams::new(1).unwrap(), 1, None)
            .unwrap();
        for v in ["01", "02", "03"] {
            repo.append_execution(&camp.uid, &record(&camp.uid, &t, &c, v))
                .unwrap();
        }
        let log = repo.log_path(&camp.uid);
        let full = fs::read(&log).unwrap();
        // cut the last line in half
        let cut = full.len() - 40;
        fs::write(&log, &full[..cut]).unwrap();

        // readers skip the torn tail
        assert_eq!(repo.executions(&camp.uid).unwrap().len(), 2);

        drop(repo);
        let root = d.path().join("repo");
        let repo = Repository::open_writer(&root).unwrap();
        let q = log.with_file_name(format!("{EXECUTION_LOG}{QUARANTINE_SUFFIX}"));
        assert!(q.exists());
        assert_eq!(repo.executions(&camp.uid).unwrap().len(), 2);
        repo.append_execution(&camp.uid, &record(&camp.uid, &t, &c, "04"))
            .unwrap();
        let vals: Vec<String> = repo
            .executions(&camp.uid)
            .unwrap()
            .into_iter()
            .map(|r| r.outcome.value().unwrap().to_owned())
            .collect();
        assert_eq!(vals, ["01", "02", "04"]);
    }

    #[test]
    fn views_validate_key_paths() {
        let (_d, repo) = fresh();
        let ok = ViewDef::new("crashes", &["outcome.kind", "config.metadata.device_name"]);
        let saved = repo.put_view(ok).unwrap();
        assert_eq!(repo.view("crashes").unwrap(), Some(saved.clone()));
        let again = repo.put_view(ViewDef::new("crashes", &["wall_ms"])).unwrap();
        assert_eq!(again.uid, saved.uid);
        assert_eq!(repo.views().unwrap().len(), 2);
        let bad = ViewDef::new("bad", &["no.such.key"]);
        assert!(matches!(repo.put_view(bad), Err(Error::SchemaViolation(_))));
        let mut bad_filter = ViewDef::new("bf", &["wall_ms"]);
        bad_filter.filters.insert("colour".into(), "red".into());
        assert!(repo.put_view(bad_filter).is_err());
    }

    #[test]
    fn key_paths_resolve() {
        let u = Uid::from_u64(1);
        let r = record(&u, &u, &u, "abcd");
        assert_eq!(resolve_key_path("outcome.kind", &r, None, None, None), json!("Result"));
        assert_eq!(resolve_key_path("outcome.value", &r, None, None, None), json!("abcd"));
        assert_eq!(resolve_key_path("exit.code", &r, None, None, None), json!(0));
        assert_eq!(resolve_key_path("verdict.label", &r, None, None, None), Value::Null);
        for p in RECORD_KEY_PATHS {
            assert!(is_valid_key_path(p));
        }
        assert!(is_valid_key_path("summary.basic.WrongCode"));
        assert!(!is_valid_key_path("summary.basic.Nope"));
        assert!(!is_valid_key_path("config.metadata."));
    }
}
