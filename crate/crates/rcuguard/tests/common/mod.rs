//! Generators shared by the property tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rcuguard::paths::*;
use rcuguard::typesys::*;

pub const FIELDS: [&str; 3] = ["l", "r", "n"];
pub const K: usize = DEFAULT_ALIAS_BOUND;

pub fn field_set(min: usize) -> impl Strategy<Value = BTreeSet<String>> {
    proptest::sample::subsequence(FIELDS.to_vec(), min..=FIELDS.len())
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

#[derive(Clone, Debug)]
pub enum Shape {
    Field(String),
    Alt(BTreeSet<String>),
    Rep(BTreeSet<String>),
}

pub fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        proptest::sample::select(FIELDS.to_vec()).prop_map(|f| Shape::Field(f.into())),
        field_set(2).prop_map(Shape::Alt),
        field_set(1).prop_map(Shape::Rep),
    ]
}

/// Paths of at most three segments with at most two index variables,
/// drawn from `vars`. Repetitions take variables in order, so two paths
/// built from the same `vars` may share them.
pub fn path_over(vars: &'static [&'static str]) -> impl Strategy<Value = Path> {
    proptest::collection::vec(shape(), 0..=3).prop_map(move |shapes| {
        let mut next = 0;
        let segs = shapes
            .into_iter()
            .map(|s| match s {
                Shape::Field(f) => PathSeg::field(f),
                Shape::Alt(fs) => PathSeg::alt(fs).unwrap(),
                Shape::Rep(fs) if next < vars.len() => {
                    next += 1;
                    PathSeg::rep(fs, IndexVar::new(vars[next - 1])).unwrap()
                }
                Shape::Rep(fs) => PathSeg::alt(fs.iter().cloned().chain(["l".into(), "r".into()])).unwrap(),
            })
            .collect();
        Path::new(segs).unwrap()
    })
}

pub fn path() -> impl Strategy<Value = Path> {
    path_over(&["k", "m"])
}

/// A pair sharing index variables, and a pair with disjoint ones.
pub fn path_pair() -> impl Strategy<Value = (Path, Path)> {
    prop_oneof![(path(), path()), (path_over(&["k"]), path_over(&["m"])), (path(), path_over(&["m", "k"]))]
}

pub fn assignments(vars: &BTreeSet<IndexVar>, max: usize) -> Vec<BTreeMap<IndexVar, usize>> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        out = out
            .into_iter()
            .flat_map(|a| {
                (0..=max).map(move |n| {
                    let mut b = a.clone();
                    b.insert(v.clone(), n);
                    b
                })
            })
            .collect();
    }
    out
}

pub fn brute_force_alias(a: &Path, b: &Path, max: usize) -> Option<BTreeMap<IndexVar, usize>> {
    let vars: BTreeSet<IndexVar> = a.index_vars().union(&b.index_vars()).cloned().collect();
    assignments(&vars, max).into_iter().find(|asg| {
        let ca = concretize(a, asg, usize::MAX).unwrap().seqs;
        let cb = concretize(b, asg, usize::MAX).unwrap().seqs;
        ca.intersection(&cb).next().is_some()
    })
}

/// Widens some unit segments of `p`.
pub fn widen(p: &Path, picks: &[(bool, usize)]) -> Path {
    let segs = p
        .segs()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (go, extra) = picks.get(i).copied().unwrap_or((false, 0));
            if !go || !s.is_unit() {
                return s.clone();
            }
            let mut fs: BTreeSet<String> = s.fields().into_iter().map(String::from).collect();
            fs.insert(FIELDS[extra % FIELDS.len()].to_string());
            if fs.len() < 2 {
                fs.insert(FIELDS[(extra + 1) % FIELDS.len()].to_string());
            }
            PathSeg::alt(fs).unwrap()
        })
        .collect();
    Path::new(segs).unwrap()
}

pub fn picks() -> impl Strategy<Value = Vec<(bool, usize)>> {
    proptest::collection::vec((any::<bool>(), 0..3usize), 3)
}

pub fn key(fs: &[&str]) -> FieldKey {
    FieldKey::of(fs.iter().map(|s| s.to_string()).collect())
}

pub fn target() -> impl Strategy<Value = Target> {
    prop_oneof![
        Just(Target::Null),
        proptest::sample::select(vec!["x", "y", "z"]).prop_map(|v| Target::Var(v.into())),
    ]
}

/// Maps over disjoint single-field keys.
pub fn fieldmap() -> impl Strategy<Value = FieldMap> {
    proptest::collection::vec(proptest::option::of(target()), 3).prop_map(|ts| {
        FieldMap::from_entries(
            FIELDS.iter().zip(ts).filter_map(|(f, t)| t.map(|t| (key(&[f]), t))),
        )
        .unwrap()
    })
}

/// Drops entries and merges same-target keys: the two ways up.
pub fn coarsen(m: &FieldMap, drop: &[bool], merge: bool) -> FieldMap {
    let kept: Vec<(FieldKey, Target)> = m
        .entries()
        .enumerate()
        .filter(|(i, _)| !drop.get(*i).copied().unwrap_or(false))
        .map(|(_, (k, t))| (k.clone(), t.clone()))
        .collect();
    if !merge {
        return FieldMap::from_entries(kept).unwrap();
    }
    let mut by_target: BTreeMap<Target, BTreeSet<String>> = BTreeMap::new();
    for (k, t) in &kept {
        by_target.entry(t.clone()).or_default().extend(k.fields().into_iter().map(String::from));
    }
    FieldMap::from_entries(by_target.into_iter().map(|(t, fs)| (FieldKey::of(fs), t))).unwrap()
}

/// Fields for generated types.
pub const TYPE_FIELDS: [&str; 2] = ["l", "r"];

/// One representative per constructor other than rcuItr.
pub fn simple_types() -> Vec<RcuType> {
    vec![
        RcuType::RcuItrBare,
        RcuType::RcuFresh(FieldMap::new()),
        RcuType::Unlinked,
        RcuType::Undef,
        RcuType::Freeable,
        RcuType::RcuRoot,
        RcuType::Bool,
    ]
}

/// An rcuItr over a path of unit segments and a map of single keys, plus
/// widening choices for going up twice.
pub fn type_chain() -> impl Strategy<Value = (RcuType, RcuType, RcuType)> {
    let seg = proptest::sample::select(TYPE_FIELDS.to_vec());
    (
        proptest::collection::vec((seg, 0..3u8), 0..=3),
        proptest::collection::vec(0..4u8, 2),
        0..3u8,
    )
        .prop_map(|(segs, tgt, top)| {
            let path_at = |lvl: u8| {
                let s: Vec<PathSeg> = segs
                    .iter()
                    .map(|(f, w)| {
                        if *w < lvl || lvl == 2 {
                            PathSeg::alt(TYPE_FIELDS).unwrap()
                        } else {
                            PathSeg::field(*f)
                        }
                    })
                    .collect();
                Path::new(s).unwrap()
            };
            let map_at = |lvl: u8| {
                let entries = TYPE_FIELDS.iter().zip(&tgt).filter_map(|(f, t)| {
                    let target = match t {
                        0 => return None,
                        1 => Target::Null,
                        2 => Target::Var("x".into()),
                        _ => Target::Var("y".into()),
                    };
                    // Each level drops the entry with the lowest code first.
                    (*t > lvl).then(|| (FieldKey::of([f.to_string()].into()), target))
                });
                FieldMap::from_entries(entries).unwrap()
            };
            let a = RcuType::RcuItr(path_at(0), map_at(0));
            let b = RcuType::RcuItr(path_at(1), map_at(1));
            let c = if top == 0 { RcuType::Undef } else { RcuType::RcuItr(path_at(2), map_at(2)) };
            (a, b, c)
        })
}

pub fn any_type() -> impl Strategy<Value = RcuType> {
    prop_oneof![
        type_chain().prop_map(|(a, _, _)| a),
        type_chain().prop_map(|(_, b, _)| b),
        proptest::sample::select(simple_types()),
    ]
}

