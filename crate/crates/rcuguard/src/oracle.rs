//! Logical (ghost) state riding alongside the machine, and the memory
//! axioms checked against it.
//!
//! The monitor never trusts the program: unlinking is detected from a
//! reachability diff around each heap update, not from what the checker
//! believed the statement did.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::machine::{Action, Fault, Loc, Machine, MachineState, Tid, Val};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Obs {
    Iterator(Tid),
    Unlinked,
    Fresh,
    Freeable,
    Root,
}

/// Where a location is in its life. Observation histories must be
/// monotone in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Stage {
    Fresh,
    Iterator,
    Unlinked,
    Freeable,
    Undef,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Fresh => "fresh",
            Stage::Iterator => "iterator",
            Stage::Unlinked => "unlinked",
            Stage::Freeable => "freeable",
            Stage::Undef => "undef",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct LogicalState {
    /// O; freed locations have no entry.
    pub obs: BTreeMap<Loc, BTreeSet<Obs>>,
    /// U: `(tid, var)` slots whose contents must not be used.
    pub undef: BTreeSet<(Tid, usize)>,
    /// T
    pub threads: BTreeSet<Tid>,
    /// F
    pub free_map: BTreeMap<Loc, BTreeSet<Tid>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub axiom: &'static str,
    pub witnesses: Vec<String>,
}

impl Violation {
    fn new(axiom: &'static str, witnesses: Vec<String>) -> Self {
        Violation { axiom, witnesses }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.axiom)?;
        if !self.witnesses.is_empty() {
            write!(f, " [{}]", self.witnesses.join(", "))?;
        }
        Ok(())
    }
}

/// Every axiom name [`check_axioms`] can report, plus the extra monitors.
pub const AXIOMS: &[&str] = &[
    "OW", "RWOW", "AWRT", "IFL", "RINFL", "ULKR", "FLR", "WULK", "FR", "WF", "FNR", "FPI", "WNR", "RITR", "HD",
    "UNQRT", "UNQR", "RECLAIM", "LIFECYCLE",
];

fn loc(o: Loc) -> String {
    format!("#{o}")
}

fn slot(m: &Machine, tid: Tid, v: usize) -> String {
    format!("{}@{}", m.threads[tid].vars[v], tid)
}

impl LogicalState {
    pub fn initial(m: &Machine, ms: &MachineState) -> LogicalState {
        let mut obs: BTreeMap<Loc, BTreeSet<Obs>> = (0..ms.heap.len()).map(|o| (o, BTreeSet::new())).collect();
        obs.entry(ms.root).or_default().insert(Obs::Root);
        LogicalState {
            obs,
            undef: BTreeSet::new(),
            threads: (0..m.threads.len()).collect(),
            free_map: BTreeMap::new(),
        }
    }

    pub fn stage(&self, o: Loc) -> Stage {
        match self.obs.get(&o) {
            None => Stage::Undef,
            Some(s) if s.contains(&Obs::Fresh) => Stage::Fresh,
            Some(s) if s.contains(&Obs::Freeable) => Stage::Freeable,
            Some(s) if s.contains(&Obs::Unlinked) => Stage::Unlinked,
            Some(_) => Stage::Iterator,
        }
    }

    fn drop_iterators(&mut self, tid: Tid) {
        for s in self.obs.values_mut() {
            s.remove(&Obs::Iterator(tid));
        }
    }

    /// Renames thread ids: `perm[old] = new`.
    pub fn permuted(&self, perm: &[Tid]) -> LogicalState {
        let p = |t: Tid| perm[t];
        LogicalState {
            obs: self
                .obs
                .iter()
                .map(|(o, s)| {
                    let s = s
                        .iter()
                        .map(|ob| match ob {
                            Obs::Iterator(t) => Obs::Iterator(p(*t)),
                            x => *x,
                        })
                        .collect();
                    (*o, s)
                })
                .collect(),
            undef: self.undef.iter().map(|(t, v)| (p(*t), *v)).collect(),
            threads: self.threads.iter().map(|t| p(*t)).collect(),
            free_map: self.free_map.iter().map(|(o, ts)| (*o, ts.iter().map(|t| p(*t)).collect())).collect(),
        }
    }
}

/// Transfers the logical state across one machine step of `tid`. Returns
/// the new state and any lifecycle regressions the step caused.
pub fn advance(
    m: &Machine,
    ls: &LogicalState,
    pre: &MachineState,
    tid: Tid,
    action: &Action,
    post: &MachineState,
) -> (LogicalState, Vec<Violation>) {
    let mut n = ls.clone();
    match action {
        Action::ReadBegin | Action::WriteBegin | Action::Branch | Action::Nop | Action::DataWrite { .. } => {}
        Action::ReadEnd => {
            n.drop_iterators(tid);
            for ts in n.free_map.values_mut() {
                ts.remove(&tid);
            }
            n.undef.extend((0..m.threads[tid].vars.len()).map(|v| (tid, v)));
        }
        Action::WriteEnd => {
            n.drop_iterators(tid);
            n.undef.extend((0..m.threads[tid].vars.len()).map(|v| (tid, v)));
        }
        Action::SyncStart => {
            for (o, _) in ls.obs.iter().filter(|(o, _)| ls.stage(**o) == Stage::Unlinked) {
                n.free_map.entry(*o).or_insert_with(|| post.bounding.clone());
            }
        }
        Action::SyncStop => {
            for (o, ts) in &ls.free_map {
                if ts.is_empty() && ls.stage(*o) == Stage::Unlinked {
                    if let Some(s) = n.obs.get_mut(o) {
                        s.remove(&Obs::Unlinked);
                        s.insert(Obs::Freeable);
                    }
                }
            }
        }
        Action::Assign { var, val, .. } => {
            n.undef.remove(&(tid, *var));
            if let Val::Loc(o) = val {
                // Readers may wander into already-removed nodes; the writer
                // holds those as unlinked/freeable instead.
                let observe = match ls.stage(*o) {
                    Stage::Iterator => true,
                    Stage::Unlinked | Stage::Freeable => post.lock != Some(tid),
                    Stage::Fresh | Stage::Undef => false,
                };
                if observe {
                    n.obs.entry(*o).or_default().insert(Obs::Iterator(tid));
                }
            }
        }
        Action::Alloc { var, loc } => {
            n.undef.remove(&(tid, *var));
            n.obs.insert(*loc, BTreeSet::from([Obs::Fresh]));
        }
        Action::Free { var, loc } => {
            n.undef.insert((tid, *var));
            n.obs.remove(loc);
            n.free_map.remove(loc);
        }
        Action::HeapWrite { .. } => {}
    }
    if matches!(action, Action::HeapWrite { .. } | Action::Free { .. }) {
        let before = m.reachable(pre);
        let after = m.reachable(post);
        for o in before.difference(&after) {
            if n.stage(*o) != Stage::Iterator {
                continue;
            }
            if let Some(s) = n.obs.get_mut(o) {
                if let Some(w) = post.lock {
                    s.remove(&Obs::Iterator(w));
                }
                s.insert(Obs::Unlinked);
            }
        }
        for o in after.difference(&before) {
            if n.stage(*o) != Stage::Fresh {
                continue;
            }
            if let Some(s) = n.obs.get_mut(o) {
                s.remove(&Obs::Fresh);
                s.insert(Obs::Iterator(tid));
            }
        }
    }
    let mut out = Vec::new();
    for o in 0..pre.heap.len() {
        let (a, b) = (ls.stage(o), n.stage(o));
        if b < a {
            out.push(Violation::new("LIFECYCLE", vec![loc(o), format!("{a} -> {b}")]));
        }
    }
    // Relinked garbage: a location back in the structure while still
    // marked removed.
    if matches!(action, Action::HeapWrite { .. }) {
        let before = m.reachable(pre);
        for o in m.reachable(post).difference(&before) {
            if matches!(n.stage(*o), Stage::Unlinked | Stage::Freeable) {
                out.push(Violation::new("LIFECYCLE", vec![loc(*o), format!("{} -> relinked", n.stage(*o))]));
            }
        }
    }
    (n, out)
}

/// All stack slots holding a location: `(tid, var, loc)`.
fn stack_refs(ms: &MachineState) -> impl Iterator<Item = (Tid, usize, Loc)> + '_ {
    ms.stacks
        .iter()
        .enumerate()
        .flat_map(|(t, s)| s.iter().enumerate().filter_map(move |(v, x)| x.loc().map(|o| (t, v, o))))
}

/// Heap edges `(parent, field, child)` out of live nodes.
fn edges<'a>(m: &'a Machine, ms: &'a MachineState) -> impl Iterator<Item = (Loc, usize, Loc)> + 'a {
    ms.heap
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.freed)
        .flat_map(move |(o, n)| m.rcu_links(n).filter_map(move |(f, v)| v.loc().map(|c| (o, f, c))))
}

/// Well-formedness of the combined machine and logical state; the empty
/// list means every axiom holds.
pub fn check_axioms(m: &Machine, ls: &LogicalState, ms: &MachineState) -> Vec<Violation> {
    let mut out = Vec::new();
    let stage = |o: Loc| ls.stage(o);
    let removed = |o: Loc| matches!(stage(o), Stage::Unlinked | Stage::Freeable);
    let has = |o: Loc, ob: Obs| ls.obs.get(&o).is_some_and(|s| s.contains(&ob));
    let fname = |f: usize| m.field_names[f].clone();
    let es: Vec<(Loc, usize, Loc)> = edges(m, ms).collect();

    // HD: links out of live nodes lead to live nodes.
    for &(o, f, c) in &es {
        if !ms.is_live(c) {
            out.push(Violation::new("HD", vec![format!("{}.{}", loc(o), fname(f)), loc(c)]));
        }
    }
    // OW: a node has at most one parent still in the structure.
    let mut parents: BTreeMap<Loc, Vec<(Loc, usize)>> = BTreeMap::new();
    for &(o, f, c) in &es {
        parents.entry(c).or_default().push((o, f));
    }
    for (c, ps) in &parents {
        let linked: Vec<_> = ps.iter().filter(|(o, _)| stage(*o) == Stage::Iterator).collect();
        if linked.len() > 1 {
            let mut w = vec![loc(*c)];
            w.extend(linked.iter().map(|(o, f)| format!("{}.{}", loc(*o), fname(*f))));
            out.push(Violation::new("OW", w));
        }
    }
    // UNQRT
    if let Some(ps) = parents.get(&ms.root) {
        out.push(Violation::new("UNQRT", ps.iter().map(|(o, f)| format!("{}.{}", loc(*o), fname(*f))).collect()));
    }
    // UNQR: the root-reachable region is a tree.
    {
        let mut seen = BTreeSet::new();
        let mut todo = vec![ms.root];
        let mut dup = BTreeSet::new();
        while let Some(o) = todo.pop() {
            if !ms.is_live(o) {
                continue;
            }
            if !seen.insert(o) {
                dup.insert(o);
                continue;
            }
            todo.extend(m.rcu_links(&ms.heap[o]).filter_map(|(_, v)| v.loc()));
        }
        if !dup.is_empty() {
            out.push(Violation::new("UNQR", dup.into_iter().map(loc).collect()));
        }
    }
    // ULKR: removed nodes are pointed to only by removed nodes.
    for &(o, f, c) in &es {
        if removed(c) && !removed(o) {
            out.push(Violation::new("ULKR", vec![format!("{}.{}", loc(o), fname(f)), loc(c)]));
        }
    }
    // FLR: a free-list node's parents are on the free list with fewer
    // pending readers.
    for &(o, f, c) in &es {
        if let Some(tc) = ls.free_map.get(&c) {
            let ok = ls.free_map.get(&o).is_some_and(|to| to.is_subset(tc));
            if !ok {
                out.push(Violation::new("FLR", vec![format!("{}.{}", loc(o), fname(f)), loc(c)]));
            }
        }
    }
    // RINFL / IFL
    for (o, ts) in &ls.free_map {
        if !ts.is_subset(&ms.bounding) {
            let extra = ts.difference(&ms.bounding).map(|t| format!("tid {t}"));
            out.push(Violation::new("RINFL", std::iter::once(loc(*o)).chain(extra).collect()));
        }
        for ob in ls.obs.get(o).into_iter().flatten() {
            if let Obs::Iterator(t) = ob {
                if Some(*t) != ms.lock && !ts.contains(t) {
                    out.push(Violation::new("IFL", vec![loc(*o), format!("tid {t}")]));
                }
            }
        }
    }
    // WNR
    if let Some(w) = ms.lock {
        if ms.readers.contains(&w) {
            out.push(Violation::new("WNR", vec![format!("tid {w}")]));
        }
        // WULK
        for (o, s) in &ls.obs {
            if s.contains(&Obs::Iterator(w)) && stage(*o) != Stage::Iterator {
                out.push(Violation::new("WULK", vec![loc(*o)]));
            }
        }
    }
    // Fresh nodes: isolated, writer-held, not observed, pointing into the
    // structure.
    for (o, s) in &ls.obs {
        if !s.contains(&Obs::Fresh) {
            continue;
        }
        if s.iter().any(|ob| *ob != Obs::Fresh) {
            out.push(Violation::new("FNR", vec![loc(*o)]));
        }
        for (p, f) in parents.get(o).into_iter().flatten() {
            out.push(Violation::new("FR", vec![loc(*o), format!("{}.{}", loc(*p), fname(*f))]));
        }
        for (f, v) in m.rcu_links(&ms.heap[*o]) {
            if let Val::Loc(c) = v {
                if stage(c) != Stage::Iterator {
                    out.push(Violation::new("FPI", vec![format!("{}.{}", loc(*o), fname(f)), loc(c)]));
                }
            }
        }
    }
    for (t, v, o) in stack_refs(ms) {
        let live_slot = !ls.undef.contains(&(t, v));
        if stage(o) == Stage::Fresh {
            // WF quantifies over every slot, dead or not.
            if ms.lock != Some(t) {
                out.push(Violation::new("WF", vec![loc(o), slot(m, t, v)]));
            }
            // RITR: readers can only ever observe iterators.
            if live_slot && ms.readers.contains(&t) {
                out.push(Violation::new("RITR", vec![loc(o), slot(m, t, v)]));
            }
            continue;
        }
        if !live_slot {
            continue;
        }
        if o == ms.root {
            if !has(o, Obs::Iterator(t)) {
                out.push(Violation::new("AWRT", vec![slot(m, t, v)]));
            }
            continue;
        }
        let ok = has(o, Obs::Iterator(t)) || (ms.lock == Some(t) && removed(o));
        if !ok {
            out.push(Violation::new("RWOW", vec![loc(o), slot(m, t, v)]));
        }
    }
    // RECLAIM: outside a write section nothing is left half-reclaimed.
    if ms.lock.is_none() {
        let stray: Vec<String> = ls
            .obs
            .keys()
            .filter(|o| matches!(stage(**o), Stage::Fresh | Stage::Unlinked | Stage::Freeable))
            .map(|o| format!("{} ({})", loc(*o), stage(*o)))
            .collect();
        if !stray.is_empty() {
            out.push(Violation::new("RECLAIM", stray));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Safe,
    Unsafe { reasons: Vec<String> },
}

impl Verdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, Verdict::Safe)
    }
}

/// Reason strings are the fault kind or axiom name, deduplicated and sorted.
pub fn safety_verdict(faults: &[Fault], violations: &[Violation]) -> Verdict {
    let reasons: BTreeSet<String> = faults
        .iter()
        .map(|f| format!("{:?}", f.kind))
        .chain(violations.iter().map(|v| v.axiom.to_string()))
        .collect();
    if reasons.is_empty() {
        Verdict::Safe
    } else {
        Verdict::Unsafe { reasons: reasons.into_iter().collect() }
    }
}
