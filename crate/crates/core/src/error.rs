use std::path::PathBuf;

use crate::uid::Uid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // corpus
    #[error("program source is empty")]
    EmptySource,
    #[error("family base {0} does not exist or is itself a variant")]
    UnknownBase(Uid),
    #[error("test {0} is a variant and cannot be a family base")]
    BaseIsVariant(Uid),
    #[error("family base {0} is invalidated")]
    InvalidatedBase(Uid),
    #[error("variant index {index} for base {base} is not the next dense index (expected {expected})")]
    BadVariantIndex { base: Uid, index: u32, expected: u32 },
    #[error("unknown uid {0}")]
    UnknownUid(String),
    #[error("test {0} is invalidated")]
    InactiveTest(Uid),

    // store
    #[error("entry {0} not found")]
    NotFound(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown campaign {0}")]
    UnknownCampaign(String),
    #[error("{0} is not a repository (run `cltest init` first)")]
    NotARepository(PathBuf),
    #[error("repository is locked by another writer ({0})")]
    Locked(String),
    #[error("repository was opened read-only")]
    ReadOnly,

    // runner
    #[error("executor not found: {0}")]
    ExecutorNotFound(String),
    #[error("invalid command template: {0}")]
    BadTemplate(String),

    // oracle
    #[error("no outcomes to vote on")]
    EmptyInput,
    #[error("configuration {0} appears more than once")]
    DuplicateConfig(Uid),
    #[error("no record for EMI base {0}")]
    MissingBaseRecord(Uid),
    #[error("records span more than one configuration")]
    MixedConfigs,
    #[error("verdict for test {test} has no label for configuration {config}")]
    MissingConfigLabel { test: Uid, config: Uid },

    // report
    #[error("campaign {campaign} has no verdicts for {missing} active test(s); run `cltest classify --campaign {campaign}` first")]
    MissingVerdicts { campaign: Uid, missing: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by what the operator asked for, as opposed to
    /// failures of the repository or the host.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Json(_))
    }
}
