use std::path::Path;

use rcuguard::annotate::{annotate_diff, Golden, Mismatch};
use rcuguard::corpus::{run_case, Expect, Manifest, NEGATIVES, POSITIVES};
use rcuguard::{check_program, CheckOptions};

fn manifest() -> Manifest {
    Manifest::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus"))).unwrap()
}

#[test]
fn manifest_lists_every_case() {
    let m = manifest();
    for name in POSITIVES {
        assert_eq!(m.case(name).map(|c| c.expect), Some(Expect::Accept), "{name}");
        assert!(m.case(name).unwrap().golden.is_some());
    }
    for name in NEGATIVES {
        let c = m.case(name).unwrap_or_else(|| panic!("{name} missing"));
        assert_eq!(c.expect, Expect::Reject);
        assert!(c.rule.is_some());
        assert!(c.static_only || !c.reasons.is_empty(), "{name}");
    }
    assert_eq!(m.cases.len(), POSITIVES.len() + NEGATIVES.len());
    let statics: Vec<&str> = m.cases.iter().filter(|c| c.static_only).map(|c| c.name.as_str()).collect();
    assert_eq!(statics, ["leak_unlinked_at_writeend"]);
}

#[test]
fn static_half_of_every_case() {
    let m = manifest();
    for c in &m.cases {
        let r = run_case(&m, c, &CheckOptions::default(), false);
        assert!(r.passed(), "{}: {:?}", c.name, r.problems);
        if c.golden.is_some() {
            assert_eq!(r.golden_mismatches, Some(0), "{}", c.name);
        }
        if c.expect == Expect::Reject {
            assert_eq!(r.rule, c.rule, "{}", c.name);
        }
    }
}

#[test]
fn widened_golden_path_is_flagged() {
    let m = manifest();
    let c = m.case("bag_remove").unwrap();
    let report = check_program(&m.program(c).unwrap(), &CheckOptions::default());
    let text = std::fs::read_to_string(m.root.join(c.golden.as_ref().unwrap())).unwrap();
    let golden: Golden = text.parse().unwrap();
    let (site, var, t) = golden
        .sites
        .iter()
        .flat_map(|s| s.bindings.iter().map(move |(x, t)| (s, x, t)))
        .find_map(|(s, x, t)| match t {
            Some(rcuguard::typesys::RcuType::RcuItr(p, _)) if p.to_string().contains("Next^k.Next") => {
                Some((s.label.clone(), x.clone(), t.clone().unwrap()))
            }
            _ => None,
        })
        .expect("a site with a Next^k.Next path");
    let widened = t.to_string().replacen("Next^k.Next", "Next^k.(Next|Prev)", 1);
    let mut g = golden.clone();
    for s in g.sites.iter_mut().filter(|s| s.label == site) {
        for (_, ty) in s.bindings.iter_mut().filter(|(x, _)| *x == var) {
            *ty = Some(widened.parse().unwrap());
        }
    }
    let d = annotate_diff(&report.sites, &g).unwrap();
    assert_eq!(d.mismatches.len(), 1);
    assert!(matches!(&d.mismatches[0], Mismatch::Differs { site: s, .. } if *s == site));
}

#[test]
fn bst_unlink_and_replace_rules() {
    let m = manifest();
    let c = m.case("bst_delete_two_children").unwrap();
    let report = check_program(&m.program(c).unwrap(), &CheckOptions::default());
    assert!(report.ok());
    let unlink: Vec<&str> = report.rules_at("lmParent.Left = leftmostR").collect();
    assert!(unlink.contains(&"T-UnlinkH"), "{unlink:?}");
    let replace: Vec<&str> = report.rules_at("parent.Left = currentF").collect();
    assert!(replace.contains(&"T-Replace"), "{replace:?}");
}

#[test]
fn alias_bound_is_configurable() {
    let m = manifest();
    for name in POSITIVES {
        let c = m.case(name).unwrap();
        let p = m.program(c).unwrap();
        for k in [1, 3, 5] {
            let opts = CheckOptions { alias_bound: k };
            assert!(check_program(&p, &opts).ok(), "{name} at K={k}");
        }
    }
}
