use std::collections::BTreeSet;

use proptest::prelude::*;
use ssgov_core::calculus::{decide, evaluate, Bundle, EligibilityAtom, EvalContext, RequestKind, RequiredSet};
use ssgov_core::fixtures::{self, who};

const UNIVERSE: [&str; 5] = ["a", "b", "c", "d", "e"];

fn subset(mask: u32) -> BTreeSet<&'static str> {
    (0..5).filter(|i| mask & (1 << i) != 0).map(|i| UNIVERSE[i]).collect()
}

fn bundle(mask: u32) -> Bundle {
    subset(mask).into_iter().map(EligibilityAtom::new).collect()
}

fn required(mask: u32) -> RequiredSet {
    subset(mask).into_iter().map(EligibilityAtom::new).collect()
}

#[test]
fn containment_matches_set_difference() {
    let mut pairs = 0;
    for b in 0..32 {
        for e in 0..32 {
            let d = decide(&bundle(b), &required(e));
            let diff: BTreeSet<_> = subset(e).difference(&subset(b)).copied().collect();
            assert_eq!(d.permit, diff.is_empty(), "B={b:05b} E={e:05b}");
            let missing: BTreeSet<&str> = d.missing_atoms.iter().map(|a| a.name.as_str()).collect();
            assert_eq!(missing, diff);
            pairs += 1;
        }
    }
    assert_eq!(pairs, 1024);
}

#[test]
fn decide_is_monotone_in_the_bundle() {
    for e in 0..32 {
        for b in 0..32u32 {
            for b2 in 0..32u32 {
                if b & b2 == b && decide(&bundle(b), &required(e)).permit {
                    assert!(decide(&bundle(b2), &required(e)).permit, "B={b:05b} B'={b2:05b} E={e:05b}");
                }
            }
        }
    }
}

#[test]
fn evaluation_is_deterministic_and_pure() {
    let store = fixtures::ship_store();
    let frames = [fixtures::ship_frame(), fixtures::iran_frame()];
    let before = store.digest();
    for day in 1..=7 {
        let ctx = EvalContext::new(
            fixtures::voyage_day(day),
            fixtures::voyage_tags(day),
            RequestKind::Named("enter_sauna".into()),
        )
        .with_param("sauna_session", "F")
        .with_param("companion", who::MOTHER);
        let a = evaluate(&frames, &store.view(), who::EVE, &ctx).unwrap();
        let b = evaluate(&frames, &store.view(), who::EVE, &ctx).unwrap();
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
        assert_eq!(store.digest(), before);
    }
}

proptest! {
    /// Random atom names, not only the five-letter universe.
    #[test]
    fn containment_on_random_sets(
        b in proptest::collection::btree_set("[a-z]{1,3}", 0..8),
        e in proptest::collection::btree_set("[a-z]{1,3}", 0..8),
    ) {
        let bundle: Bundle = b.iter().map(|s| EligibilityAtom::new(s.clone())).collect();
        let req: RequiredSet = e.iter().map(|s| EligibilityAtom::new(s.clone())).collect();
        prop_assert_eq!(decide(&bundle, &req).permit, e.is_subset(&b));
    }
}
