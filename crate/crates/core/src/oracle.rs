//! Classification: majority vote across configurations, EMI family
//! agreement on one configuration, determinism and reliability screens.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmiFamily};
use crate::error::{Error, Result};
use crate::minikernel::EvalParams;
use crate::runner::{self, normalize_name, Configuration, ExecutionRecord, Outcome};
use crate::store::Repository;
use crate::uid::Uid;

/// Fewest result-producing executions that can establish a majority.
pub const MIN_QUORUM: usize = 2;
/// Fraction of unreliable executions at or above which a configuration is
/// screened out.
pub const RELIABILITY_THRESHOLD: f64 = 0.25;

/// Per-configuration classification of one execution. `Inconclusive` is
/// given to result-producing configurations of a test whose vote had no
/// unique winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Correct,
    WrongCode,
    CompilerCrash,
    RuntimeCrash,
    Timeout,
    Inconclusive,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Correct,
        Label::WrongCode,
        Label::CompilerCrash,
        Label::RuntimeCrash,
        Label::Timeout,
        Label::Inconclusive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Correct => "Correct",
            Label::WrongCode => "WrongCode",
            Label::CompilerCrash => "CompilerCrash",
            Label::RuntimeCrash => "RuntimeCrash",
            Label::Timeout => "Timeout",
            Label::Inconclusive => "Inconclusive",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        let norm = normalize_name(s);
        Label::ALL
            .into_iter()
            .find(|l| normalize_name(l.as_str()) == norm)
    }

    fn for_failure(outcome: &Outcome) -> Option<Label> {
        match outcome {
            Outcome::CompilerCrash => Some(Label::CompilerCrash),
            Outcome::RuntimeCrash => Some(Label::RuntimeCrash),
            Outcome::Timeout => Some(Label::Timeout),
            Outcome::Result { .. } => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote<K> {
    pub majority: Option<String>,
    pub labels: BTreeMap<K, Label>,
}

impl<K> Vote<K> {
    pub fn inconclusive(&self) -> bool {
        self.majority.is_none()
    }
}

/// Plurality vote over result-producing executions. Crashes and timeouts
/// neither vote nor block; they keep their own labels. A tie for the top
/// count, or fewer than [`MIN_QUORUM`] voters, leaves no majority.
pub fn majority_vote<K: Ord + Clone>(results: &BTreeMap<K, Outcome>) -> Result<Vote<K>> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut voters = 0;
    for o in results.values() {
        if let Some(v) = o.value() {
            *counts.entry(v).or_default() += 1;
            voters += 1;
        }
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let leaders: Vec<&str> = counts
        .iter()
        .filter(|(_, c)| **c == top)
        .map(|(v, _)| *v)
        .collect();
    let majority = (voters >= MIN_QUORUM && leaders.len() == 1).then(|| leaders[0].to_owned());
    let labels = results
        .iter()
        .map(|(k, o)| {
            let label = Label::for_failure(o).unwrap_or_else(|| match &majority {
                None => Label::Inconclusive,
                Some(m) if o.value() == Some(m.as_str()) => Label::Correct,
                Some(_) => Label::WrongCode,
            });
            (k.clone(), label)
        })
        .collect();
    Ok(Vote { majority, labels })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub test_uid: Uid,
    pub majority: Option<String>,
    pub per_config: BTreeMap<Uid, Label>,
    pub inconclusive: bool,
}

/// Classifies one test from its records, one per configuration.
pub fn classify_test(test_uid: &Uid, records: &[ExecutionRecord]) -> Result<TestVerdict> {
    let mut outcomes = BTreeMap::new();
    for r in records {
        if r.test_uid != *test_uid {
            return Err(Error::InvalidArgument(format!(
                "record for test {} passed to classify {test_uid}",
                r.test_uid
            )));
        }
        if outcomes.insert(r.config_uid.clone(), r.outcome.clone()).is_some() {
            return Err(Error::DuplicateConfig(r.config_uid.clone()));
        }
    }
    let vote = majority_vote(&outcomes)?;
    Ok(TestVerdict {
        test_uid: test_uid.clone(),
        inconclusive: vote.inconclusive(),
        majority: vote.majority,
        per_config: vote.labels,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmiVerdict {
    pub base_uid: Uid,
    pub config_uid: Uid,
    pub diverging_variants: Vec<Uid>,
    pub crashing_variants: Vec<Uid>,
    pub base_outcome: Outcome,
}

/// Compares each variant's outcome with the base's on one configuration.
/// Variants without a record are skipped. Lists follow family order.
pub fn classify_emi_family(family: &EmiFamily, records: &[ExecutionRecord]) -> Result<EmiVerdict> {
    let config_uid = match records.first() {
        Some(r) => r.config_uid.clone(),
        None => return Err(Error::MissingBaseRecord(family.base_uid.clone())),
    };
    if records.iter().any(|r| r.config_uid != config_uid) {
        return Err(Error::MixedConfigs);
    }
    let mut by_test: HashMap<&Uid, &Outcome> = HashMap::new();
    for r in records {
        if by_test.insert(&r.test_uid, &r.outcome).is_some() {
            return Err(Error::InvalidArgument(format!(
                "more than one record for test {}",
                r.test_uid
            )));
        }
    }
    let base_outcome = by_test
        .get(&family.base_uid)
        .copied()
        .cloned()
        .ok_or_else(|| Error::MissingBaseRecord(family.base_uid.clone()))?;
    let mut diverging = Vec::new();
    let mut crashing = Vec::new();
    for v in &family.variant_uids {
        let Some(o) = by_test.get(v) else { continue };
        match (o.value(), base_outcome.value()) {
            (None, _) => crashing.push(v.clone()),
            (Some(got), Some(want)) if got != want => diverging.push(v.clone()),
            _ => {}
        }
    }
    Ok(EmiVerdict {
        base_uid: family.base_uid.clone(),
        config_uid,
        diverging_variants: diverging,
        crashing_variants: crashing,
        base_outcome,
    })
}

/// True when every outcome equals the first (kind and value).
pub fn outcomes_agree(outcomes: &[Outcome]) -> bool {
    outcomes.windows(2).all(|w| w[0] == w[1])
}

/// Runs `test` on `config` `repetitions` times, sequentially, without
/// recording, and reports whether all outcomes were identical.
pub fn check_determinism(
    repo: &Repository,
    test_uid: &Uid,
    config: &Configuration,
    params: &EvalParams,
    repetitions: usize,
) -> Result<bool> {
    if repetitions < 2 {
        return Err(Error::InvalidArgument("determinism needs at least 2 repetitions".into()));
    }
    let test = repo.test(test_uid)?;
    let scratch = Uid::from_u64(0);
    let mut outcomes = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let rec = runner::execute_pair(repo, &test, config, params, &scratch)?;
        outcomes.push(rec.outcome);
    }
    Ok(outcomes_agree(&outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub config_uid: Uid,
    pub total: usize,
    pub unreliable: usize,
    pub fraction: f64,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityOptions {
    pub threshold: f64,
    /// Count timeouts as unreliable (off by default).
    pub include_timeouts: bool,
}

impl Default for ReliabilityOptions {
    fn default() -> Self {
        ReliabilityOptions {
            threshold: RELIABILITY_THRESHOLD,
            include_timeouts: false,
        }
    }
}

pub fn reliability_score(config_uid: &Uid, verdicts: &[TestVerdict]) -> Result<ReliabilityReport> {
    reliability_score_with(config_uid, verdicts, ReliabilityOptions::default())
}

/// Counts compiler crashes, runtime crashes and wrong-code labels of one
/// configuration; the configuration is below threshold when that count is
/// at least `threshold` of the benchmark (inclusive).
pub fn reliability_score_with(
    config_uid: &Uid,
    verdicts: &[TestVerdict],
    opts: ReliabilityOptions,
) -> Result<ReliabilityReport> {
    let mut unreliable = 0;
    for v in verdicts {
        let label = v
            .per_config
            .get(config_uid)
            .ok_or_else(|| Error::MissingConfigLabel {
                test: v.test_uid.clone(),
                config: config_uid.clone(),
            })?;
        let counts = match label {
            Label::CompilerCrash | Label::RuntimeCrash | Label::WrongCode => true,
            Label::Timeout => opts.include_timeouts,
            Label::Correct | Label::Inconclusive => false,
        };
        if counts {
            unreliable += 1;
        }
    }
    let total = verdicts.len();
    let fraction = if total == 0 {
        0.0
    } else {
        unreliable as f64 / total as f64
    };
    Ok(ReliabilityReport {
        config_uid: config_uid.clone(),
        total,
        unreliable,
        fraction,
        below_threshold: total > 0 && fraction >= opts.threshold,
    })
}

/// Most recent record per (test, config), in first-seen order. Reruns
/// append to the log, so the latest one reflects current behaviour.
pub fn latest_per_pair(records: Vec<ExecutionRecord>) -> Vec<ExecutionRecord> {
    let mut slot: HashMap<(Uid, Uid), usize> = HashMap::new();
    let mut out: Vec<ExecutionRecord> = Vec::new();
    for r in records {
        let key = (r.test_uid.clone(), r.config_uid.clone());
        match slot.get(&key) {
            Some(&i) => out[i] = r,
            None => {
                slot.insert(key, out.len());
                out.push(r);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignClassification {
    pub campaign_id: Option<Uid>,
    pub verdicts: Vec<TestVerdict>,
    pub emi: Vec<EmiVerdict>,
}

/// Classifies every test of a campaign (latest record per pair), plus every
/// EMI family whose base ran in the campaign under the family's own input,
/// and persists the results.
pub fn classify_campaign(repo: &Repository, campaign_id: &Uid) -> Result<CampaignClassification> {
    let campaign = repo.campaign(campaign_id)?;
    let records = latest_per_pair(repo.executions(campaign_id)?);
    let mut by_test: BTreeMap<Uid, Vec<ExecutionRecord>> = BTreeMap::new();
    for r in records {
        by_test.entry(r.test_uid.clone()).or_default().push(r);
    }
    let mut verdicts = Vec::new();
    for (test, recs) in &by_test {
        let v = classify_test(test, recs)?;
        repo.put_verdict(campaign_id, &v)?;
        verdicts.push(v);
    }

    let corpus = Corpus::load(repo)?;
    let mut emi = Vec::new();
    for family in corpus.families()? {
        if family.input_params != campaign.params || !by_test.contains_key(&family.base_uid) {
            continue;
        }
        for config in &campaign.config_uids {
            let mut recs: Vec<ExecutionRecord> = Vec::new();
            for t in std::iter::once(&family.base_uid).chain(&family.variant_uids) {
                if let Some(rs) = by_test.get(t) {
                    recs.extend(rs.iter().filter(|r| r.config_uid == *config).cloned());
                }
            }
            match classify_emi_family(&family, &recs) {
                Ok(v) => {
                    repo.put_emi_verdict(campaign_id, &v)?;
                    emi.push(v);
                }
                Err(Error::MissingBaseRecord(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(CampaignClassification {
        campaign_id: Some(campaign_id.clone()),
        verdicts,
        emi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use proptest::prelude::*;

    fn r(v: &str) -> Outcome {
        Outcome::result(v)
    }

    fn map(items: &[(&str, Outcome)]) -> BTreeMap<String, Outcome> {
        items.iter().map(|(k, o)| ((*k).to_owned(), o.clone())).collect()
    }

    #[test]
    fn six_three_one() {
        let mut items: Vec<(String, Outcome)> = (1..=6).map(|i| (format!("c{i:02}"), r("aa"))).collect();
        items.extend((7..=9).map(|i| (format!("c{i:02}"), r("bb"))));
        items.push(("c10".into(), Outcome::RuntimeCrash));
        let m: BTreeMap<String, Outcome> = items.into_iter().collect();
        let vote = majority_vote(&m).unwrap();
        assert_eq!(vote.majority.as_deref(), Some("aa"));
        for i in 1..=6 {
            assert_eq!(vote.labels[&format!("c{i:02}")], Label::Correct);
        }
        for i in 7..=9 {
            assert_eq!(vote.labels[&format!("c{i:02}")], Label::WrongCode);
        }
        assert_eq!(vote.labels["c10"], Label::RuntimeCrash);
    }

    #[test]
    fn equal_split_is_inconclusive() {
        let vote = majority_vote(&map(&[("c1", r("aa")), ("c2", r("aa")), ("c3", r("bb")), ("c4", r("bb"))])).unwrap();
        assert!(vote.inconclusive());
        assert!(vote.labels.values().all(|l| *l == Label::Inconclusive));
    }

    #[test]
    fn lone_witness_is_inconclusive() {
        let vote = majority_vote(&map(&[("c1", r("aa"))])).unwrap();
        assert!(vote.inconclusive());
        let vote = majority_vote(&map(&[("c1", r("aa")), ("c2", Outcome::Timeout)])).unwrap();
        assert!(vote.inconclusive());
        assert_eq!(vote.labels["c2"], Label::Timeout);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(
            majority_vote::<String>(&BTreeMap::new()),
            Err(Error::EmptyInput)
        ));
    }

    fn rec(test: u64, config: u64, outcome: Outcome) -> ExecutionRecord {
        ExecutionRecord {
            test_uid: Uid::from_u64(test),
            config_uid: Uid::from_u64(config),
            campaign_id: Uid::from_u64(0),
            started_at: Utc::now(),
            wall_ms: 1,
            exit: runner::Exit::Code(0),
            stdout: vec![],
            stderr: vec![],
            outcome,
            command: String::new(),
        }
    }

    #[test]
    fn classify_all_agree() {
        let recs: Vec<_> = (1..=10).map(|c| rec(1, c, r("aa"))).collect();
        let v = classify_test(&Uid::from_u64(1), &recs).unwrap();
        assert!(!v.inconclusive);
        assert!(v.per_config.values().all(|l| *l == Label::Correct));
    }

    #[test]
    fn classify_one_dissenting_compiler() {
        // three compilers, the first disagrees
        let recs = vec![rec(1, 1, r("0badc0de")), rec(1, 2, r("12345678")), rec(1, 3, r("12345678"))];
        let v = classify_test(&Uid::from_u64(1), &recs).unwrap();
        assert_eq!(v.per_config[&Uid::from_u64(1)], Label::WrongCode);
        assert_eq!(v.majority.as_deref(), Some("12345678"));
    }

    #[test]
    fn classify_all_crash() {
        let recs = vec![
            rec(1, 1, Outcome::CompilerCrash),
            rec(1, 2, Outcome::RuntimeCrash),
            rec(1, 3, Outcome::Timeout),
        ];
        let v = classify_test(&Uid::from_u64(1), &recs).unwrap();
        assert!(v.inconclusive);
        assert_eq!(
            v.per_config.values().copied().collect::<Vec<_>>(),
            [Label::CompilerCrash, Label::RuntimeCrash, Label::Timeout]
        );
    }

    #[test]
    fn classify_rejects_duplicates() {
        let recs = vec![rec(1, 1, r("aa")), rec(1, 1, r("aa"))];
        assert!(matches!(
            classify_test(&Uid::from_u64(1), &recs),
            Err(Error::DuplicateConfig(_))
        ));
    }

    fn family(n: u64) -> EmiFamily {
        EmiFamily {
            base_uid: Uid::from_u64(100),
            variant_uids: (1..=n).map(|i| Uid::from_u64(100 + i)).collect(),
            input_params: EvalParams::new(4).unwrap(),
        }
    }

    #[test]
    fn emi_divergence() {
        let recs = vec![rec(100, 1, r("aa")), rec(101, 1, r("aa")), rec(102, 1, r("bb")), rec(103, 1, r("aa"))];
        let v = classify_emi_family(&family(3), &recs).unwrap();
        assert_eq!(v.diverging_variants, vec![Uid::from_u64(102)]);
        assert!(v.crashing_variants.is_empty());
    }

    #[test]
    fn emi_all_agree() {
        let recs: Vec<_> = (100..=103).map(|t| rec(t, 1, r("aa"))).collect();
        let v = classify_emi_family(&family(3), &recs).unwrap();
        assert!(v.diverging_variants.is_empty() && v.crashing_variants.is_empty());
    }

    #[test]
    fn emi_crashing_base() {
        let recs = vec![
            rec(100, 1, Outcome::CompilerCrash),
            rec(101, 1, r("aa")),
            rec(102, 1, Outcome::RuntimeCrash),
            rec(103, 1, Outcome::Timeout),
        ];
        let v = classify_emi_family(&family(3), &recs).unwrap();
        assert!(v.diverging_variants.is_empty());
        assert_eq!(v.crashing_variants, vec![Uid::from_u64(102), Uid::from_u64(103)]);
        assert_eq!(v.base_outcome, Outcome::CompilerCrash);
    }

    #[test]
    fn emi_errors() {
        let recs = vec![rec(101, 1, r("aa"))];
        assert!(matches!(
            classify_emi_family(&family(1), &recs),
            Err(Error::MissingBaseRecord(_))
        ));
        let mixed = vec![rec(100, 1, r("aa")), rec(101, 2, r("aa"))];
        assert!(matches!(
            classify_emi_family(&family(1), &mixed),
            Err(Error::MixedConfigs)
        ));
    }

    fn verdicts_with(config: &Uid, bad: usize, total: usize) -> Vec<TestVerdict> {
        (0..total)
            .map(|i| TestVerdict {
                test_uid: Uid::from_u64(i as u64),
                majority: Some("aa".into()),
                per_config: [(
                    config.clone(),
                    match (i < bad, i % 3) {
                        (true, 0) => Label::CompilerCrash,
                        (true, 1) => Label::RuntimeCrash,
                        (true, _) => Label::WrongCode,
                        (false, _) => Label::Correct,
                    },
                )]
                .into_iter()
                .collect(),
                inconclusive: false,
            })
            .collect()
    }

    #[test]
    fn reliability_boundary_is_inclusive() {
        let c = Uid::from_u64(9);
        let at = reliability_score(&c, &verdicts_with(&c, 150, 600)).unwrap();
        assert_eq!(at.fraction, 0.25);
        assert!(at.below_threshold);
        let under = reliability_score(&c, &verdicts_with(&c, 149, 600)).unwrap();
        assert!(!under.below_threshold);
        let clean = reliability_score(&c, &verdicts_with(&c, 0, 600)).unwrap();
        assert_eq!(clean.fraction, 0.0);
        assert!(!clean.below_threshold);
    }

    #[test]
    fn timeouts_are_opt_in() {
        let c = Uid::from_u64(9);
        let mut vs = verdicts_with(&c, 0, 4);
        vs[0].per_config.insert(c.clone(), Label::Timeout);
        assert_eq!(reliability_score(&c, &vs).unwrap().unreliable, 0);
        let opts = ReliabilityOptions {
            include_timeouts: true,
            ..Default::default()
        };
        assert_eq!(reliability_score_with(&c, &vs, opts).unwrap().unreliable, 1);
        vs[1].per_config.clear();
        assert!(matches!(
            reliability_score(&c, &vs),
            Err(Error::MissingConfigLabel { .. })
        ));
    }

    #[test]
    fn latest_record_wins() {
        let recs = vec![rec(1, 1, r("aa")), rec(1, 2, r("bb")), rec(1, 1, r("cc"))];
        let latest = latest_per_pair(recs);
        assert_eq!(latest.len(), 2);
        assert_eq!(latest[0].outcome, r("cc"));
    }

    fn outcome_strategy() -> impl Strategy<Value = Outcome> {
        prop_oneof![
            4 => (0u8..4).prop_map(|v| Outcome::result(&format!("{v:02x}"))),
            1 => Just(Outcome::CompilerCrash),
            1 => Just(Outcome::RuntimeCrash),
            1 => Just(Outcome::Timeout),
        ]
    }

    /// Brute-force oracle: count every distinct value directly.
    fn brute_majority(outcomes: &[Outcome]) -> Option<String> {
        let values: Vec<&str> = outcomes.iter().filter_map(Outcome::value).collect();
        if values.len() < 2 {
            return None;
        }
        let mut best: Option<(&str, usize)> = None;
        let mut tie = false;
        let mut distinct: Vec<&str> = values.clone();
        distinct.sort();
        distinct.dedup();
        for d in distinct {
            let n = values.iter().filter(|v| **v == d).count();
            match best {
                Some((_, b)) if n > b => {
                    best = Some((d, n));
                    tie = false;
                }
                Some((_, b)) if n == b => tie = true,
                None => best = Some((d, n)),
                _ => {}
            }
        }
        if tie {
            None
        } else {
            best.map(|(d, _)| d.to_owned())
        }
    }

    fn all_outcomes() -> Vec<Outcome> {
        vec![
            r("00"),
            r("01"),
            r("02"),
            r("03"),
            Outcome::CompilerCrash,
            Outcome::RuntimeCrash,
            Outcome::Timeout,
        ]
    }

    #[test]
    fn exhaustive_small_populations() {
        let alphabet = all_outcomes();
        for n in 1..=5usize {
            let combos = alphabet.len().pow(n as u32);
            for mut code in 0..combos {
                let mut outs = Vec::with_capacity(n);
                for _ in 0..n {
                    outs.push(alphabet[code % alphabet.len()].clone());
                    code /= alphabet.len();
                }
                let m: BTreeMap<usize, Outcome> = outs.iter().cloned().enumerate().collect();
                let vote = majority_vote(&m).unwrap();
                assert_eq!(vote.majority, brute_majority(&outs), "{outs:?}");
                assert_eq!(vote.labels.len(), n);
            }
        }
    }

    /// n = 6 is too large to enumerate over seven outcomes in a unit test
    /// run, so it is covered over the four result values plus one crash.
    #[test]
    fn exhaustive_six_configs() {
        let alphabet = [r("00"), r("01"), r("02"), r("03"), Outcome::RuntimeCrash];
        for mut code in 0..alphabet.len().pow(6) {
            let mut outs = Vec::with_capacity(6);
            for _ in 0..6 {
                outs.push(alphabet[code % alphabet.len()].clone());
                code /= alphabet.len();
            }
            let m: BTreeMap<usize, Outcome> = outs.iter().cloned().enumerate().collect();
            assert_eq!(majority_vote(&m).unwrap().majority, brute_majority(&outs));
        }
    }

    proptest! {
        #[test]
        fn plurality_soundness(outs in prop::collection::vec(outcome_strategy(), 1..=12)) {
            let m: BTreeMap<usize, Outcome> = outs.iter().cloned().enumerate().collect();
            let vote = majority_vote(&m).unwrap();
            prop_assert_eq!(&vote.majority, &brute_majority(&outs));
            if let Some(maj) = &vote.majority {
                let count = |v: &str| outs.iter().filter(|o| o.value() == Some(v)).count();
                for o in &outs {
                    if let Some(v) = o.value() {
                        if v != maj {
                            prop_assert!(count(maj) > count(v));
                        }
                    }
                }
            }
            // exactly one label per config; inconclusive has no Correct/WrongCode
            prop_assert_eq!(vote.labels.len(), outs.len());
            if vote.inconclusive() {
                prop_assert!(vote.labels.values().all(|l| !matches!(l, Label::Correct | Label::WrongCode)));
            }
        }

        #[test]
        fn permutation_invariance(
            outs in prop::collection::vec(outcome_strategy(), 1..=12),
            perm_seed in any::<u64>(),
        ) {
            let keys: Vec<String> = (0..outs.len()).map(|i| format!("k{i:02}")).collect();
            let m: BTreeMap<String, Outcome> = keys.iter().cloned().zip(outs.iter().cloned()).collect();
            // relabel the configurations with a permutation
            let mut perm: Vec<usize> = (0..outs.len()).collect();
            let mut s = perm_seed;
            for i in (1..perm.len()).rev() {
                s = crate::minikernel::fault::splitmix64(s);
                perm.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let relabeled: BTreeMap<String, Outcome> = perm
                .iter()
                .enumerate()
                .map(|(i, &p)| (format!("z{p:02}"), outs[i].clone()))
                .collect();
            let a = majority_vote(&m).unwrap();
            let b = majority_vote(&relabeled).unwrap();
            prop_assert_eq!(&a.majority, &b.majority);
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(a.labels[&keys[i]], b.labels[&format!("z{p:02}")]);
            }
        }

        #[test]
        fn flipping_to_crash_never_improves_reliability(
            labels in prop::collection::vec(0usize..6, 1..50),
            flip in any::<prop::sample::Index>(),
        ) {
            let c = Uid::from_u64(1);
            let mk = |ls: &[Label]| -> Vec<TestVerdict> {
                ls.iter().enumerate().map(|(i, l)| TestVerdict {
                    test_uid: Uid::from_u64(i as u64),
                    majority: None,
                    per_config: [(c.clone(), *l)].into_iter().collect(),
                    inconclusive: false,
                }).collect()
            };
            let ls: Vec<Label> = labels.iter().map(|i| Label::ALL[*i]).collect();
            let before = reliability_score(&c, &mk(&ls)).unwrap().fraction;
            let i = flip.index(ls.len());
            if ls[i] == Label::Correct {
                let mut flipped = ls.clone();
                flipped[i] = Label::RuntimeCrash;
                let after = reliability_score(&c, &mk(&flipped)).unwrap().fraction;
                prop_assert!(after >= before);
            }
        }
    }
}
