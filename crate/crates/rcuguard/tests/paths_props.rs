//! Properties of paths: MayAlias against brute-force concretization,
//! subtyping laws, reindexing.

mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use rcuguard::paths::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn may_alias_false_means_disjoint((a, b) in path_pair()) {
        if !may_alias(&a, &b, K) {
            let hit = brute_force_alias(&a, &b, K + 2);
            prop_assert!(hit.is_none(), "{a} and {b} alias under {hit:?}");
        }
    }

    #[test]
    fn may_alias_is_symmetric((a, b) in path_pair()) {
        prop_assert_eq!(may_alias(&a, &b, K), may_alias(&b, &a, K));
    }

    #[test]
    fn may_alias_is_reflexive(a in path()) {
        prop_assert!(may_alias(&a, &a, K));
    }

    #[test]
    fn path_subtype_reflexive(a in path()) {
        prop_assert!(path_subtype(&a, &a));
    }

    #[test]
    fn path_subtype_transitive(a in path(), p1 in picks(), p2 in picks(), c in path()) {
        let b = widen(&a, &p1);
        let b2 = widen(&b, &p2);
        prop_assert!(path_subtype(&a, &b));
        prop_assert!(path_subtype(&b, &b2));
        prop_assert!(path_subtype(&a, &b2));
        // Arbitrary third paths: the law as an implication.
        if path_subtype(&b, &c) {
            prop_assert!(path_subtype(&a, &c));
        }
    }

    #[test]
    fn widening_only_grows_the_language(a in path(), p in picks(), n in 0..3usize) {
        let b = widen(&a, &p);
        let asg: BTreeMap<IndexVar, usize> = a.index_vars().into_iter().map(|k| (k, n)).collect();
        let ca = concretize(&a, &asg, usize::MAX).unwrap().seqs;
        let cb = concretize(&b, &asg, usize::MAX).unwrap().seqs;
        prop_assert!(ca.is_subset(&cb));
    }

    #[test]
    fn reindex_is_idempotent(a in path(), fs in field_set(1)) {
        let k = IndexVar::new("k");
        let once = reindex_path(&a, &k, &fs);
        let twice = reindex_path(&once, &k, &fs);
        // The pattern re-arises when a second matching unit segment
        // follows the one just absorbed; each pass absorbs exactly one.
        let absorbs = |s: Option<&PathSeg>, rep: &PathSeg| {
            s.is_some_and(|s| {
                s.is_unit()
                    && s.fields() == fs.iter().map(String::as_str).collect()
                    && fs.iter().all(|f| rep.fields().contains(f.as_str()))
            })
        };
        let segs = a.segs();
        let rearises = segs.iter().position(|s| s.index() == Some(&k)).is_some_and(|i| {
            absorbs(segs.get(i + 1), &segs[i]) && absorbs(segs.get(i + 2), &segs[i])
        });
        if rearises {
            prop_assert_eq!(twice.segs().len() + 1, once.segs().len());
        } else {
            prop_assert_eq!(twice, once);
        }
    }

    #[test]
    fn concretize_cardinality_is_product_of_choices(a in path(), n in 0..4usize) {
        let asg: BTreeMap<IndexVar, usize> = a.index_vars().into_iter().map(|k| (k, n)).collect();
        let c = concretize(&a, &asg, usize::MAX).unwrap();
        let expected: usize = a
            .segs()
            .iter()
            .map(|s| if s.is_unit() { s.fields().len() } else { s.fields().len().pow(n as u32) })
            .product();
        prop_assert_eq!(c.seqs.len(), expected);
        prop_assert!(c.seqs.iter().all(|s| s.len() == c.seqs.iter().next().unwrap().len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fieldmap_subtype_reflexive(a in fieldmap()) {
        prop_assert!(fieldmap_subtype(&a, &a));
    }

    #[test]
    fn fieldmap_subtype_transitive(
        a in fieldmap(),
        d1 in proptest::collection::vec(any::<bool>(), 3),
        m1 in any::<bool>(),
        d2 in proptest::collection::vec(any::<bool>(), 3),
        m2 in any::<bool>(),
        c in fieldmap(),
    ) {
        let b = coarsen(&a, &d1, m1);
        let b2 = coarsen(&b, &d2, m2);
        prop_assert!(fieldmap_subtype(&a, &b));
        prop_assert!(fieldmap_subtype(&b, &b2));
        prop_assert!(fieldmap_subtype(&a, &b2));
        if fieldmap_subtype(&b, &c) {
            prop_assert!(fieldmap_subtype(&a, &c));
        }
    }

    #[test]
    fn empty_map_is_top(a in fieldmap()) {
        prop_assert!(fieldmap_subtype(&a, &FieldMap::new()));
    }
}
