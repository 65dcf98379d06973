mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::{alignment_oracle, cap_set, fixture, fixture_names, key_universe, OracleClass};
use skillaudit::alignment::{
    classify_alignment, classify_keys, extract_declared, extract_implemented, AlignmentClass, CanonicalKey, Origin,
};
use skillaudit::rules::RuleRepository;
use skillaudit::{ingest_skill, IngestSource};

fn keys(mask: u8) -> BTreeSet<CanonicalKey> {
    key_universe()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, k)| k)
        .collect()
}

fn same(a: AlignmentClass, b: OracleClass) -> bool {
    matches!(
        (a, b),
        (AlignmentClass::Match, OracleClass::Match)
            | (AlignmentClass::OverDeclaration, OracleClass::Over)
            | (AlignmentClass::UnderDeclaration, OracleClass::Under)
            | (AlignmentClass::Mixed, OracleClass::Mixed)
    )
}

#[test]
fn every_membership_assignment_matches_set_oracle() {
    let mut seen = 0;
    for d in 0u8..64 {
        for c in 0u8..64 {
            let r = classify_alignment(cap_set(Origin::Declared, d), cap_set(Origin::Implemented, c)).unwrap();
            assert!(same(r.klass, alignment_oracle(d, c)), "d={d:06b} c={c:06b} got {:?}", r.klass);
            assert_eq!(r.shadow, keys(c & !d));
            assert_eq!(r.overclaimed, keys(d & !c));
            seen += 1;
        }
    }
    assert_eq!(seen, 4096);
}

#[test]
fn exactly_one_class_per_pair() {
    for d in 0u8..64 {
        for c in 0u8..64 {
            let k = classify_keys(&keys(d), &keys(c));
            let hits = [
                AlignmentClass::Match,
                AlignmentClass::OverDeclaration,
                AlignmentClass::UnderDeclaration,
                AlignmentClass::Mixed,
            ]
            .iter()
            .filter(|x| **x == k)
            .count();
            assert_eq!(hits, 1);
        }
    }
}

#[test]
fn swapped_origins_are_rejected() {
    assert!(classify_alignment(cap_set(Origin::Implemented, 1), cap_set(Origin::Implemented, 1)).is_err());
    assert!(classify_alignment(cap_set(Origin::Declared, 1), cap_set(Origin::Declared, 1)).is_err());
}

#[test]
fn normalization_is_idempotent_on_every_known_pair() {
    let rules = RuleRepository::defaults();
    for k in key_universe() {
        let once = rules.normalization.normalize_key(&k).unwrap();
        let twice = rules.normalization.normalize_key(&once.key).unwrap();
        assert_eq!(once.key, twice.key);
    }
    for (r, a) in [("file", "read"), ("fs", "write"), ("network", "egress"), ("shell", "execute")] {
        if let Ok(n) = rules.normalization.normalize(r, a) {
            let again = rules.normalization.normalize_key(&n.key).unwrap();
            assert_eq!(n.key, again.key);
        }
    }
}

#[test]
fn extracted_capabilities_cite_verbatim_evidence() {
    let rules = RuleRepository::defaults();
    for name in fixture_names() {
        let pkg = ingest_skill(&IngestSource::Directory(fixture(&name))).unwrap();
        let (declared, _) = extract_declared(&pkg, &rules.lexicon, &rules.normalization);
        let (implemented, _) = extract_implemented(&pkg, &rules.analyzers, &rules.normalization, None);
        for cap in declared.items.values().chain(implemented.items.values()) {
            assert!(cap.evidence.verify(&pkg), "{name}: {:?} cites {:?}", cap.key, cap.evidence);
        }
    }
}

proptest! {
    #[test]
    fn growing_c_never_turns_under_into_match(d in 0u8..64, c in 0u8..64, extra in 0u8..64) {
        let before = classify_keys(&keys(d), &keys(c));
        let after = classify_keys(&keys(d), &keys(c | extra));
        if before == AlignmentClass::UnderDeclaration {
            prop_assert_ne!(after, AlignmentClass::Match);
        }
    }

    #[test]
    fn shrinking_d_never_adds_overclaims(d in 0u8..64, c in 0u8..64, drop in 0u8..64) {
        let full = classify_alignment(cap_set(Origin::Declared, d), cap_set(Origin::Implemented, c)).unwrap();
        let less = classify_alignment(cap_set(Origin::Declared, d & !drop), cap_set(Origin::Implemented, c)).unwrap();
        prop_assert!(less.overclaimed.is_subset(&full.overclaimed));
    }

    #[test]
    fn shadow_and_overclaim_partition_the_difference(d in 0u8..64, c in 0u8..64) {
        let r = classify_alignment(cap_set(Origin::Declared, d), cap_set(Origin::Implemented, c)).unwrap();
        prop_assert!(r.shadow.is_disjoint(&r.overclaimed));
        prop_assert_eq!(r.shadow.len() + r.overclaimed.len(), (d ^ c).count_ones() as usize);
    }
}
