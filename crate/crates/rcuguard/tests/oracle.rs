use std::collections::BTreeSet;

use rcuguard::machine::*;
use rcuguard::oracle::*;
use rcuguard::parse;

const BAG: &str = "fields { Next: rcu, data: normal }
root head;
writer w { rcu_write { par = head; cur = par.Next; curl = cur.Next; par.Next = curl; sync_start; sync_stop; free(cur); } }
reader r * 2 { rcu_read { p = head; c = p.Next; v = c.data; } }";

const LIST: &str = "(head, Next=n1)\n(n1, Next=n2, data=1)\n(n2, Next=n3, data=2)\n(n3, data=3)";

const TREE: &str = "fields { Left: rcu, Right: rcu }
root t;
writer w { rcu_write { skip; } }
reader r * 3 { rcu_read { skip; } }";

struct Run {
    m: Machine,
    ms: MachineState,
    ls: LogicalState,
    violations: Vec<Violation>,
}

impl Run {
    fn new(src: &str, heap: &str) -> Run {
        let m = Machine::new(&parse(src).unwrap(), None);
        let ms = m.init(&heap.parse().unwrap()).unwrap();
        let ls = LogicalState::initial(&m, &ms);
        Run { m, ms, ls, violations: vec![] }
    }

    fn step(&mut self, tid: Tid) -> Action {
        let s = self.m.step(&self.ms, tid).unwrap();
        let (ls, mut v) = advance(&self.m, &self.ls, &self.ms, tid, &s.action, &s.state);
        v.extend(check_axioms(&self.m, &ls, &s.state));
        self.violations.extend(v);
        self.ms = s.state;
        self.ls = ls;
        s.action
    }

    fn until(&mut self, tid: Tid, stop: impl Fn(&Instr) -> bool) {
        while let Some(i) = self.m.pending(&self.ms, tid) {
            if stop(i) {
                return;
            }
            self.step(tid);
        }
    }
}

fn names(v: &[Violation]) -> BTreeSet<&'static str> {
    v.iter().map(|v| v.axiom).collect()
}

#[test]
fn initial_tree_satisfies_every_axiom() {
    let r = Run::new(TREE, "(t, Left=a, Right=b)\n(a, Left=c)\n(b)\n(c)");
    assert_eq!(check_axioms(&r.m, &r.ls, &r.ms), vec![]);
    let r = Run::new(BAG, LIST);
    assert_eq!(check_axioms(&r.m, &r.ls, &r.ms), vec![]);
}

#[test]
fn two_heap_parents_break_ownership_and_uniqueness() {
    let mut r = Run::new(TREE, "(t, Left=a, Right=b)\n(a)\n(b)");
    let (a, b) = (1, 2);
    let left = r.m.field_index("Left").unwrap();
    r.ms.heap[a].fields[left] = Val::Loc(b);
    let got = names(&check_axioms(&r.m, &r.ls, &r.ms));
    assert_eq!(got, BTreeSet::from(["OW", "UNQR"]));
}

#[test]
fn free_map_entry_for_a_non_bounding_reader() {
    let mut r = Run::new(TREE, "(t, Left=a)\n(a)");
    let left = r.m.field_index("Left").unwrap();
    r.ms.heap[0].fields[left] = Val::Null;
    r.ms.lock = Some(0);
    r.ms.phases[0] = Phase::InWrite;
    r.ls.obs.insert(1, BTreeSet::from([Obs::Unlinked]));
    r.ls.free_map.insert(1, BTreeSet::from([3]));
    let got = names(&check_axioms(&r.m, &r.ls, &r.ms));
    assert_eq!(got, BTreeSet::from(["RINFL"]));
    r.ms.bounding.insert(3);
    r.ms.readers.insert(3);
    assert_eq!(check_axioms(&r.m, &r.ls, &r.ms), vec![]);
}

#[test]
fn unlink_marks_the_node_unlinked() {
    let mut r = Run::new(BAG, LIST);
    r.until(0, |i| matches!(i, Instr::FieldWrite { .. }));
    assert_eq!(r.ls.stage(1), Stage::Iterator);
    r.step(0);
    assert!(r.ls.obs[&1].contains(&Obs::Unlinked));
    assert_eq!(r.ls.stage(1), Stage::Unlinked);
    assert!(r.violations.is_empty(), "{:?}", r.violations);
}

#[test]
fn sync_start_snapshots_the_readers() {
    let mut r = Run::new(BAG, LIST);
    r.step(1);
    r.step(2);
    r.until(0, |i| matches!(i, Instr::SyncStart));
    r.step(0);
    assert_eq!(r.ls.free_map.get(&1), Some(&BTreeSet::from([1, 2])));

    // A reader leaving drops out of every entry.
    r.until(1, |i| matches!(i, Instr::ReadEnd));
    r.step(1);
    assert_eq!(r.ls.free_map.get(&1), Some(&BTreeSet::from([2])));
    r.until(2, |_| false);
    assert_eq!(r.ls.free_map.get(&1), Some(&BTreeSet::new()));

    r.step(0);
    assert_eq!(r.ls.stage(1), Stage::Freeable);
    r.until(0, |_| false);
    assert_eq!(r.ls.stage(1), Stage::Undef);
    assert!(r.violations.is_empty(), "{:?}", r.violations);
}

#[test]
fn advance_leaves_untouched_locations_alone() {
    let mut r = Run::new(BAG, LIST);
    let before = r.ls.clone();
    r.until(0, |i| matches!(i, Instr::FieldWrite { .. }));
    r.step(0);
    for o in [2, 3] {
        assert_eq!(r.ls.free_map.get(&o), before.free_map.get(&o));
        assert_eq!(r.ls.stage(o), Stage::Iterator);
    }
}

#[test]
fn verdicts() {
    assert_eq!(safety_verdict(&[], &[]), Verdict::Safe);
    let uaf = Fault { kind: FaultKind::UseAfterFree, tid: 1, instr: "x = y.Next".into() };
    assert_eq!(safety_verdict(&[uaf], &[]), Verdict::Unsafe { reasons: vec!["UseAfterFree".into()] });
    let v = Violation { axiom: "ULKR", witnesses: vec![] };
    assert_eq!(safety_verdict(&[], &[v]), Verdict::Unsafe { reasons: vec!["ULKR".into()] });
}
