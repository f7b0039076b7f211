//! Subtyping laws on types and environments, and reindexing against the
//! gates on the environments the corpus actually produces.

use std::collections::BTreeSet;

mod common;

use common::{any_type, simple_types, type_chain};
use proptest::prelude::*;
use rcuguard::paths::*;
use rcuguard::typesys::*;
use rcuguard::{check_program, parse, CheckOptions};

fn p(s: &str) -> Path {
    s.parse().unwrap()
}

fn itr(path: &str, map: &[(&str, &str)]) -> RcuType {
    let m = FieldMap::from_entries(map.iter().map(|(f, t)| {
        let t = if *t == "null" { Target::Null } else { Target::Var(t.to_string()) };
        (FieldKey::of(f.split('|').map(String::from).collect()), t)
    }))
    .unwrap();
    RcuType::RcuItr(p(path), m)
}

#[test]
fn distinct_non_iterator_constructors_are_unrelated() {
    for a in simple_types() {
        for b in simple_types() {
            let related = type_subtype(&a, &b);
            let expected = a == b || (a == RcuType::RcuItrBare && b == RcuType::Undef);
            assert_eq!(related, expected, "{a} <: {b}");
        }
    }
}

#[test]
fn examples() {
    assert!(type_subtype(&RcuType::Unlinked, &RcuType::Unlinked));
    assert!(type_subtype(&itr("Next", &[("Next", "z")]), &RcuType::Undef));
    assert!(!type_subtype(&RcuType::Undef, &itr("eps", &[])));
    assert!(type_subtype(&itr("eps.l", &[("l", "cur")]), &itr("eps.(l|r)", &[("l|r", "cur")])));
    assert!(!type_subtype(&itr("(l|r)", &[]), &itr("l", &[])));
    let unl: TypeEnv = "x: unlinked".parse().unwrap();
    let und: TypeEnv = "x: undef".parse().unwrap();
    assert!(!env_subtype(&unl, &und));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn type_subtype_reflexive(a in any_type()) {
        prop_assert!(type_subtype(&a, &a));
    }

    #[test]
    fn type_subtype_transitive((a, b, c) in type_chain(), d in any_type()) {
        prop_assert!(type_subtype(&a, &b), "{a} <: {b}");
        prop_assert!(type_subtype(&b, &c), "{b} <: {c}");
        prop_assert!(type_subtype(&a, &c));
        if type_subtype(&b, &d) {
            prop_assert!(type_subtype(&a, &d));
        }
    }

    #[test]
    fn json_round_trip(ts in proptest::collection::vec(any_type(), 0..4)) {
        let g: TypeEnv = ts.into_iter().enumerate().map(|(i, t)| (format!("v{i}"), t)).collect();
        let text = serde_json::to_string(&g).unwrap();
        prop_assert_eq!(serde_json::from_str::<TypeEnv>(&text).unwrap(), g);
    }

    #[test]
    fn env_subtype_reflexive(ts in proptest::collection::vec(any_type(), 0..4)) {
        let g: TypeEnv = ts.into_iter().enumerate().map(|(i, t)| (format!("v{i}"), t)).collect();
        prop_assert!(env_subtype(&g, &g));
    }
}

fn corpus_envs() -> Vec<TypeEnv> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/pos");
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let src = std::fs::read_to_string(e.unwrap().path()).unwrap();
        let prog = parse(&src).unwrap();
        let report = check_program(&prog, &CheckOptions::default());
        assert!(report.ok());
        out.extend(report.sites.into_values());
    }
    out
}

#[test]
fn reindex_preserves_gates_on_corpus_envs() {
    let envs = corpus_envs();
    assert!(envs.len() > 50);
    let mut tried = 0;
    for g in &envs {
        let vars: BTreeSet<IndexVar> = g.iterators().flat_map(|(_, p, _)| p.index_vars()).collect();
        for k in vars {
            for fs in [&["Next"][..], &["Left"], &["Right"], &["Left", "Right"]] {
                let fs: BTreeSet<String> = fs.iter().map(|s| s.to_string()).collect();
                let h = env_reindex(g, &k, &fs);
                tried += 1;
                for gate in Gate::ALL {
                    assert_eq!(env_gate(g, gate), env_gate(&h, gate), "{gate} on {g}");
                }
                let names = |e: &TypeEnv| e.iter().map(|(x, t)| (x.clone(), t.name())).collect::<Vec<_>>();
                assert_eq!(names(g), names(&h));
            }
        }
    }
    assert!(tried > 0);
}

#[test]
fn env_subtype_antisymmetric_on_corpus_envs() {
    let envs = corpus_envs();
    for a in &envs {
        assert!(env_subtype(a, a));
        for b in envs.iter().take(40) {
            if env_subtype(a, b) && env_subtype(b, a) {
                assert_eq!(a, b);
            }
        }
    }
}
