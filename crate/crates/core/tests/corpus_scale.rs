mod common;

use cltest::corpus::{Corpus, FamilyFilter, TestFilter, TestMode};
use cltest::minikernel::EvalParams;
use common::fresh_repo;

const TINY: &str = "var a;\na = (a + 1);\n";

#[test]
fn sixty_thousand_minus_invalidated() {
    let (_d, repo) = fresh_repo();
    let mut corpus = Corpus::load(&repo).unwrap();
    let mut uids = Vec::with_capacity(60_000);
    for i in 0..60_000 {
        let mode = TestMode::ALL[i % 6];
        uids.push(corpus.register_test(TINY, mode, "1.0.0", None).unwrap().uid);
    }
    // every 18th test, the first 3,185 of them
    let doomed: Vec<_> = uids.iter().step_by(18).take(3_185).cloned().collect();
    assert_eq!(doomed.len(), 3_185);
    let mut changed = 0;
    for u in &doomed {
        changed += corpus.invalidate(u, "miscompiled kernel").unwrap();
    }
    assert_eq!(changed, 3_185);
    assert_eq!(corpus.active_tests(&TestFilter::default()).len(), 56_815);

    // reloading from disk gives the same answer
    let reloaded = Corpus::load(&repo).unwrap();
    assert_eq!(reloaded.active_tests(&TestFilter::default()).len(), 56_815);
}

#[test]
fn bases_and_variants_cascade() {
    let (_d, repo) = fresh_repo();
    let mut corpus = Corpus::load(&repo).unwrap();
    let params = EvalParams::new(1).unwrap();
    let variants: Vec<String> = vec![TINY.to_owned(); 40];
    let mut bases = Vec::new();
    for _ in 0..250 {
        let b = corpus.register_test(TINY, TestMode::Basic, "1.0.0", None).unwrap();
        corpus.create_family(&b.uid, &variants, params).unwrap();
        bases.push(b.uid);
    }
    let mut changed = 0;
    for b in &bases[..70] {
        changed += corpus.invalidate(b, "bad base").unwrap();
    }
    assert_eq!(changed, 70 + 70 * 40);
    let active_bases = corpus.active_tests(&TestFilter {
        family: Some(FamilyFilter::NotVariant),
        ..Default::default()
    });
    let active_variants = corpus.active_tests(&TestFilter {
        family: Some(FamilyFilter::Variant),
        ..Default::default()
    });
    assert_eq!(active_bases.len(), 180);
    assert_eq!(active_variants.len(), 7_200);
    // invalidating again changes nothing
    assert_eq!(corpus.invalidate(&bases[0], "again").unwrap(), 0);
}
