//! Test corpus bookkeeping: registration, EMI families, generator-version
//! provenance and soft invalidation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minikernel::EvalParams;
use crate::store::{EntryKind, Repository};
use crate::uid::Uid;

pub const KERNEL_FILE: &str = "kernel.mk";
pub const FAMILY_FILE: &str = "family.json";
pub const UNKNOWN_GENERATOR: &str = "unknown";

/// Generation feature set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestMode {
    Basic,
    Vector,
    Barrier,
    AtomicSection,
    AtomicReduction,
    All,
}

impl TestMode {
    pub const ALL: [TestMode; 6] = [
        TestMode::Basic,
        TestMode::Vector,
        TestMode::Barrier,
        TestMode::AtomicSection,
        TestMode::AtomicReduction,
        TestMode::All,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestMode::Basic => "basic",
            TestMode::Vector => "vector",
            TestMode::Barrier => "barrier",
            TestMode::AtomicSection => "atomic_section",
            TestMode::AtomicReduction => "atomic_reduction",
            TestMode::All => "all",
        }
    }

    /// Case-insensitive; `-` and `_` are interchangeable.
    pub fn parse(s: &str) -> Option<TestMode> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        TestMode::ALL.into_iter().find(|m| m.as_str() == norm)
    }
}

impl fmt::Display for TestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyLink {
    pub base_uid: Uid,
    pub variant_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invalidation {
    pub reason: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub kind: String,
    pub uid: Uid,
    pub mode: TestMode,
    pub source_ref: String,
    pub generator_version: String,
    #[serde(default)]
    pub family: Option<FamilyLink>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub invalidation: Option<Invalidation>,
}

impl TestCase {
    pub fn is_active(&self) -> bool {
        self.invalidation.is_none()
    }

    pub fn is_variant(&self) -> bool {
        self.family.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != "test" {
            return Err(Error::SchemaViolation("test meta.kind must be \"test\"".into()));
        }
        if !is_generator_version(&self.generator_version) {
            return Err(Error::SchemaViolation(format!(
                "generator_version {:?} is neither semver nor \"unknown\"",
                self.generator_version
            )));
        }
        if self.source_ref.is_empty() || self.source_ref.contains("..") || self.source_ref.starts_with('/') {
            return Err(Error::SchemaViolation(format!("bad source_ref {:?}", self.source_ref)));
        }
        if let Some(f) = &self.family {
            if f.variant_index < 1 {
                return Err(Error::SchemaViolation("variant_index starts at 1".into()));
            }
            if f.base_uid == self.uid {
                return Err(Error::SchemaViolation("a test cannot be its own base".into()));
            }
        }
        Ok(())
    }
}

/// `MAJOR.MINOR.PATCH` with optional `-pre`/`+build` suffix, or `unknown`.
pub fn is_generator_version(v: &str) -> bool {
    if v == UNKNOWN_GENERATOR {
        return true;
    }
    let core = v.split(['-', '+']).next().unwrap_or("");
    let parts: Vec<&str> = core.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

/// An EMI base with its variants, all dead-code-equivalent under
/// `input_params`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmiFamily {
    pub base_uid: Uid,
    pub variant_uids: Vec<Uid>,
    pub input_params: EvalParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyFilter {
    /// Neither a variant nor a base with variants.
    Standalone,
    /// Bases that have at least one variant.
    Base,
    Variant,
    /// Everything that is not a variant.
    NotVariant,
    VariantOf(Uid),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFilter {
    pub mode: Option<TestMode>,
    pub generator_version: Option<String>,
    pub family: Option<FamilyFilter>,
}

impl TestFilter {
    /// Parses `key=value` pairs separated by commas, e.g.
    /// `mode=basic,generator_version=1.0.0,family=base`.
    pub fn parse(s: &str) -> Result<TestFilter> {
        let mut f = TestFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {part:?}")))?;
            match k.trim() {
                "mode" => {
                    f.mode = Some(TestMode::parse(v).ok_or_else(|| {
                        Error::InvalidArgument(format!("unknown mode {v:?}"))
                    })?)
                }
                "generator_version" | "version" => f.generator_version = Some(v.to_owned()),
                "family" => {
                    f.family = Some(match v {
                        "standalone" => FamilyFilter::Standalone,
                        "base" => FamilyFilter::Base,
                        "variant" => FamilyFilter::Variant,
                        "not_variant" | "not-variant" => FamilyFilter::NotVariant,
                        other => FamilyFilter::VariantOf(Uid::parse(other).map_err(|_| {
                            Error::InvalidArgument(format!("unknown family filter {other:?}"))
                        })?),
                    })
                }
                other => return Err(Error::InvalidArgument(format!("unknown filter key {other:?}"))),
            }
        }
        Ok(f)
    }
}

/// Writer-side view of the corpus. Loads the index once and keeps it in
/// step with the repository as tests are registered and invalidated.
#[derive(Debug)]
pub struct Corpus<'r> {
    repo: &'r Repository,
    index: BTreeMap<Uid, TestCase>,
    // base -> variants ordered by index
    variants: HashMap<Uid, Vec<Uid>>,
}

impl<'r> Corpus<'r> {
    pub fn load(repo: &'r Repository) -> Result<Corpus<'r>> {
        let mut index = BTreeMap::new();
        for t in repo.tests()? {
            index.insert(t.uid.clone(), t);
        }
        let mut variants: HashMap<Uid, Vec<(u32, Uid)>> = HashMap::new();
        for t in index.values() {
            if let Some(f) = &t.family {
                variants
                    .entry(f.base_uid.clone())
                    .or_default()
                    .push((f.variant_index, t.uid.clone()));
            }
        }
        let variants = variants
            .into_iter()
            .map(|(b, mut vs)| {
                vs.sort();
                (b, vs.into_iter().map(|(_, u)| u).collect())
            })
            .collect();
        Ok(Corpus {
            repo,
            index,
            variants,
        })
    }

    pub fn repo(&self) -> &'r Repository {
        self.repo
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, uid: &Uid) -> Option<&TestCase> {
        self.index.get(uid)
    }

    pub fn require(&self, uid: &Uid) -> Result<&TestCase> {
        self.index
            .get(uid)
            .ok_or_else(|| Error::UnknownUid(uid.to_string()))
    }

    /// All tests, invalidated ones included, ordered by UID.
    pub fn all(&self) -> impl Iterator<Item = &TestCase> {
        self.index.values()
    }

    pub fn variants_of(&self, base: &Uid) -> &[Uid] {
        self.variants.get(base).map_or(&[], Vec::as_slice)
    }

    pub fn register_test(
        &mut self,
        source: &str,
        mode: TestMode,
        generator_version: &str,
        family: Option<FamilyLink>,
    ) -> Result<TestCase> {
        if source.trim().is_empty() {
            return Err(Error::EmptySource);
        }
        if let Some(link) = &family {
            let base = match self.index.get(&link.base_uid) {
                Some(b) if !b.is_variant() => b,
                _ => return Err(Error::UnknownBase(link.base_uid.clone())),
            };
            if !base.is_active() {
                return Err(Error::InvalidatedBase(link.base_uid.clone()));
            }
            let expected = self.variants_of(&link.base_uid).len() as u32 + 1;
            if link.variant_index != expected {
                return Err(Error::BadVariantIndex {
                    base: link.base_uid.clone(),
                    index: link.variant_index,
                    expected,
                });
            }
        }
        let test = TestCase {
            kind: "test".into(),
            uid: self.repo.new_uid(),
            mode,
            source_ref: KERNEL_FILE.into(),
            generator_version: generator_version.to_owned(),
            family,
            created_at: Utc::now(),
            invalidation: None,
        };
        test.validate()?;
        self.repo
            .write_payload(EntryKind::Test, &test.uid, KERNEL_FILE, source.as_bytes())?;
        self.repo.put_test(&test)?;
        if let Some(link) = &test.family {
            self.variants
                .entry(link.base_uid.clone())
                .or_default()
                .push(test.uid.clone());
        }
        self.index.insert(test.uid.clone(), test.clone());
        Ok(test)
    }

    /// Registers `variant_sources` as variants of `base` (indices continue
    /// after any existing variants) and persists the family.
    pub fn create_family(
        &mut self,
        base: &Uid,
        variant_sources: &[String],
        input_params: EvalParams,
    ) -> Result<EmiFamily> {
        let b = self.require(base)?;
        if b.is_variant() {
            return Err(Error::BaseIsVariant(base.clone()));
        }
        if !b.is_active() {
            return Err(Error::InvalidatedBase(base.clone()));
        }
        if variant_sources.is_empty() {
            return Err(Error::InvalidArgument("a family needs at least one variant".into()));
        }
        if let Some(existing) = self.family(base)? {
            if existing.input_params != input_params {
                return Err(Error::InvalidArgument(format!(
                    "family of {base} was built for {} threads",
                    existing.input_params.thread_count
                )));
            }
        }
        let mode = b.mode;
        let gv = b.generator_version.clone();
        for src in variant_sources {
            let index = self.variants_of(base).len() as u32 + 1;
            self.register_test(
                src,
                mode,
                &gv,
                Some(FamilyLink {
                    base_uid: base.clone(),
                    variant_index: index,
                }),
            )?;
        }
        let family = EmiFamily {
            base_uid: base.clone(),
            variant_uids: self.variants_of(base).to_vec(),
            input_params,
        };
        let mut bytes = serde_json::to_vec_pretty(&family)?;
        bytes.push(b'\n');
        self.repo
            .write_payload(EntryKind::Test, base, FAMILY_FILE, &bytes)?;
        Ok(family)
    }

    pub fn family(&self, base: &Uid) -> Result<Option<EmiFamily>> {
        family_of(self.repo, base)
    }

    /// Soft-invalidates `uid`; an EMI base takes its variants with it.
    /// Returns how many tests changed state (0 when already invalidated).
    pub fn invalidate(&mut self, uid: &Uid, reason: &str) -> Result<usize> {
        self.require(uid)?;
        let mut targets = vec![uid.clone()];
        targets.extend(self.variants_of(uid).iter().cloned());
        let at = Utc::now();
        let mut changed = 0;
        for t in targets {
            let test = self.index.get_mut(&t).expect("indexed");
            if test.invalidation.is_some() {
                continue;
            }
            test.invalidation = Some(Invalidation {
                reason: reason.to_owned(),
                at,
            });
            self.repo.put_test(test)?;
            changed += 1;
        }
        Ok(changed)
    }

    pub fn matches(&self, t: &TestCase, filter: &TestFilter) -> bool {
        if filter.mode.is_some_and(|m| m != t.mode) {
            return false;
        }
        if filter
            .generator_version
            .as_ref()
            .is_some_and(|v| *v != t.generator_version)
        {
            return false;
        }
        match &filter.family {
            None => true,
            Some(FamilyFilter::Standalone) => !t.is_variant() && self.variants_of(&t.uid).is_empty(),
            Some(FamilyFilter::Base) => !self.variants_of(&t.uid).is_empty(),
            Some(FamilyFilter::Variant) => t.is_variant(),
            Some(FamilyFilter::NotVariant) => !t.is_variant(),
            Some(FamilyFilter::VariantOf(b)) => t.family.as_ref().is_some_and(|f| f.base_uid == *b),
        }
    }

    /// Non-invalidated tests matching `filter`, ordered by UID.
    pub fn active_tests(&self, filter: &TestFilter) -> Vec<TestCase> {
        self.index
            .values()
            .filter(|t| t.is_active() && self.matches(t, filter))
            .cloned()
            .collect()
    }

    /// Every family with a persisted `family.json`, ordered by base UID.
    pub fn families(&self) -> Result<Vec<EmiFamily>> {
        let mut bases: Vec<&Uid> = self.variants.keys().collect();
        bases.sort();
        let mut out = Vec::new();
        for b in bases {
            if let Some(f) = self.family(b)? {
                out.push(f);
            }
        }
        Ok(out)
    }
}

/// Reads the persisted family of `base`, if any.
pub fn family_of(repo: &Repository, base: &Uid) -> Result<Option<EmiFamily>> {
    match repo.read_payload(EntryKind::Test, base, FAMILY_FILE) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(Error::NotFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> (tempfile::TempDir, Repository) {
        let dir = tempfile::tempdir().unwrap();
        let repo = Repository::init(dir.path().join("repo")).unwrap();
        (dir, repo)
    }

    const SRC: &str = "var a;\na = gid;\n";

    #[test]
    fn standalone_registration_round_trips() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        let t = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        assert!(t.family.is_none());
        assert_eq!(repo.test(&t.uid).unwrap(), t);
        assert_eq!(repo.test_source(&t).unwrap(), SRC);
        assert!(repo.kernel_path(&t).ends_with(format!("tests/{}/kernel.mk", t.uid)));
    }

    #[test]
    fn empty_source_is_rejected() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        assert!(matches!(
            c.register_test("  \n", TestMode::Basic, "1.0.0", None),
            Err(Error::EmptySource)
        ));
    }

    #[test]
    fn variants_link_and_cannot_be_bases() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        let b = c.register_test(SRC, TestMode::Barrier, "1.0.0", None).unwrap();
        let link = FamilyLink {
            base_uid: b.uid.clone(),
            variant_index: 1,
        };
        let v1 = c
            .register_test(SRC, TestMode::Barrier, "1.0.0", Some(link.clone()))
            .unwrap();
        assert_eq!(v1.family, Some(link));
        let err = c
            .register_test(
                SRC,
                TestMode::Basic,
                "1.0.0",
                Some(FamilyLink {
                    base_uid: v1.uid.clone(),
                    variant_index: 1,
                }),
            )
            .unwrap_err();
        assert!(matches!(err, Error::UnknownBase(_)));
        let missing = c.register_test(
            SRC,
            TestMode::Basic,
            "1.0.0",
            Some(FamilyLink {
                base_uid: Uid::from_u64(5),
                variant_index: 1,
            }),
        );
        assert!(matches!(missing, Err(Error::UnknownBase(_))));
    }

    #[test]
    fn variant_indices_are_dense() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        let b = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        let gap = c.register_test(
            SRC,
            TestMode::Basic,
            "1.0.0",
            Some(FamilyLink {
                base_uid: b.uid.clone(),
                variant_index: 2,
            }),
        );
        assert!(matches!(gap, Err(Error::BadVariantIndex { expected: 1, .. })));
    }

    #[test]
    fn families() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        let params = EvalParams::new(16).unwrap();
        let b = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        let sources: Vec<String> = (0..40).map(|i| format!("var a;\na = {i};\n")).collect();
        let fam = c.create_family(&b.uid, &sources, params).unwrap();
        assert_eq!(fam.variant_uids.len(), 40);
        for (i, v) in fam.variant_uids.iter().enumerate() {
            let t = c.get(v).unwrap();
            assert_eq!(t.family.as_ref().unwrap().variant_index, i as u32 + 1);
            assert_eq!(t.family.as_ref().unwrap().base_uid, b.uid);
        }
        assert_eq!(c.family(&b.uid).unwrap(), Some(fam.clone()));

        let single = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        let f1 = c
            .create_family(&single.uid, &[SRC.to_owned()], params)
            .unwrap();
        assert_eq!(f1.variant_uids.len(), 1);

        let v = fam.variant_uids[0].clone();
        assert!(matches!(
            c.create_family(&v, &[SRC.to_owned()], params),
            Err(Error::BaseIsVariant(_))
        ));

        // reload sees the same structure
        let again = Corpus::load(&repo).unwrap();
        assert_eq!(again.variants_of(&b.uid), fam.variant_uids.as_slice());
        assert_eq!(again.families().unwrap().len(), 2);
    }

    #[test]
    fn invalidation_cascades_and_is_idempotent() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        let s = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        assert_eq!(c.invalidate(&s.uid, "nondet").unwrap(), 1);
        assert_eq!(c.invalidate(&s.uid, "nondet").unwrap(), 0);

        let b = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        let sources = vec![SRC.to_owned(); 40];
        c.create_family(&b.uid, &sources, EvalParams::new(4).unwrap())
            .unwrap();
        assert_eq!(c.invalidate(&b.uid, "generator bug").unwrap(), 41);
        assert!(c.active_tests(&TestFilter::default()).is_empty());
        assert!(matches!(
            c.invalidate(&Uid::from_u64(3), "x"),
            Err(Error::UnknownUid(_))
        ));
        let reloaded = Corpus::load(&repo).unwrap();
        assert_eq!(reloaded.active_tests(&TestFilter::default()).len(), 0);
        assert_eq!(
            repo.test(&s.uid).unwrap().invalidation.unwrap().reason,
            "nondet"
        );
    }

    #[test]
    fn filters_by_mode_version_and_family() {
        let (_d, repo) = fresh();
        let mut c = Corpus::load(&repo).unwrap();
        assert!(c.active_tests(&TestFilter::default()).is_empty());
        let a = c.register_test(SRC, TestMode::Basic, "1.0.0", None).unwrap();
        let b = c.register_test(SRC, TestMode::Vector, "1.1.0", None).unwrap();
        c.create_family(&b.uid, &[SRC.to_owned()], EvalParams::new(2).unwrap())
            .unwrap();
        let f = TestFilter::parse("mode=basic").unwrap();
        assert_eq!(c.active_tests(&f), vec![a.clone()]);
        let f = TestFilter::parse("generator_version=1.1.0").unwrap();
        assert_eq!(c.active_tests(&f).len(), 2);
        let f = TestFilter::parse("family=base").unwrap();
        assert_eq!(c.active_tests(&f)[0].uid, b.uid);
        let f = TestFilter::parse("family=standalone").unwrap();
        assert_eq!(c.active_tests(&f), vec![a]);
        let f = TestFilter::parse(&format!("family={}", b.uid)).unwrap();
        assert_eq!(c.active_tests(&f).len(), 1);
        let all = c.active_tests(&TestFilter::default());
        assert!(all.windows(2).all(|w| w[0].uid < w[1].uid));
        assert!(TestFilter::parse("colour=red").is_err());
    }

    #[test]
    fn generator_versions() {
        for ok in ["1.0.0", "0.10.3-beta", "2.0.0+abc", "unknown"] {
            assert!(is_generator_version(ok), "{ok}");
        }
        for bad in ["", "1.0", "v1.0.0", "1.x.0"] {
            assert!(!is_generator_version(bad), "{bad}");
        }
    }

    #[test]
    fn mode_names() {
        assert_eq!(TestMode::parse("ATOMIC-SECTION"), Some(TestMode::AtomicSection));
        assert_eq!(TestMode::parse("basic"), Some(TestMode::Basic));
        assert_eq!(
            serde_json::to_string(&TestMode::AtomicReduction).unwrap(),
            "\"ATOMIC_REDUCTION\""
        );
        assert_eq!(TestMode::ALL.len(), 6);
    }
}
