//! Bounded exhaustive exploration of thread interleavings.
//!
//! Depth-first over scheduler choices. After a thread takes a step that
//! other threads can observe, its following thread-local steps (stack
//! moves, pure branches) run immediately: they commute with everything
//! else, so fusing them loses no behaviours. Visited states are
//! deduplicated modulo permutation of interchangeable readers.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

use crate::lang::{Program, ThreadKind};
use crate::machine::{Fault, HeapSpec, InitError, Machine, MachineState, Tid};
use crate::oracle::{advance, check_axioms, safety_verdict, LogicalState, Verdict, Violation};

/// Upper bound on consecutive thread-local steps; a longer run is a
/// spinning loop and counts as hitting the step bound.
const LOCAL_LIMIT: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExploreBounds {
    /// Per-thread bound on shared-memory (non-local) steps.
    pub max_steps: usize,
    pub max_heap_nodes: usize,
    pub reader_count: usize,
    pub dedup: bool,
    /// Check the axioms every `sample` steps (1 = every step).
    pub sample: usize,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        ExploreBounds { max_steps: 40, max_heap_nodes: 5, reader_count: 2, dedup: true, sample: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub verdict: Verdict,
    pub faults: Vec<Fault>,
    pub violations: Vec<Violation>,
    /// Index into `schedule` of the offending step.
    pub step: usize,
    /// One thread id per machine step, replayable with [`replay`].
    pub schedule: Vec<Tid>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExploreReport {
    pub states_explored: usize,
    pub schedules_completed: usize,
    pub violations: Vec<Finding>,
    pub exhausted: bool,
    /// Branches cut by the step bound.
    pub truncated: usize,
}

impl ExploreReport {
    pub fn safe(&self) -> bool {
        self.violations.is_empty()
    }

    /// Distinct reasons across all findings.
    pub fn reasons(&self) -> BTreeSet<String> {
        self.violations
            .iter()
            .flat_map(|f| match &f.verdict {
                Verdict::Safe => vec![],
                Verdict::Unsafe { reasons } => reasons.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("initial heap rejected: {0}")]
    Init(#[from] InitError),
    #[error("initial heap has {got} nodes, bound is {bound}")]
    HeapTooLarge { got: usize, bound: usize },
    #[error("bounds must be at least 1")]
    BadBounds,
}

/// What has gone wrong along one trace: the first violation of each
/// axiom, and the fault that ended it, if any.
#[derive(Clone, Debug, Default)]
struct Log {
    faults: Vec<Fault>,
    violations: Vec<Violation>,
}

impl Log {
    fn absorb(&mut self, vs: Vec<Violation>) {
        for v in vs {
            if !self.violations.iter().any(|w| w.axiom == v.axiom) {
                self.violations.push(v);
            }
        }
    }

    fn verdict(&self) -> Verdict {
        safety_verdict(&self.faults, &self.violations)
    }
}

#[derive(Clone)]
struct Node {
    ms: MachineState,
    ls: LogicalState,
    /// Shared steps taken per thread.
    counts: Vec<usize>,
    schedule: Vec<Tid>,
    log: Log,
}

enum Outcome {
    /// The run continues; violations do not stop it.
    Ok(Node),
    /// A machine fault: the run cannot continue.
    Fault(Node),
    Truncated,
}

/// One machine step plus monitor update.
fn micro(
    m: &Machine,
    ms: &MachineState,
    ls: &LogicalState,
    tid: Tid,
    check: bool,
) -> Result<(MachineState, LogicalState, &'static str, Vec<Violation>), Fault> {
    let step = m.step(ms, tid)?;
    let (ls2, mut vs) = advance(m, ls, ms, tid, &step.action, &step.state);
    if check {
        vs.extend(check_axioms(m, &ls2, &step.state));
    }
    Ok((step.state, ls2, step.rule, vs))
}

impl Node {
    fn finding(&self) -> Finding {
        Finding {
            verdict: self.log.verdict(),
            faults: self.log.faults.clone(),
            violations: self.log.violations.clone(),
            step: self.schedule.len().saturating_sub(1),
            schedule: self.schedule.clone(),
        }
    }
}

/// Runs `tid`'s pending shared step, then its trailing local steps.
fn transition(m: &Machine, n: &Node, tid: Tid, b: &ExploreBounds, clock: &mut usize) -> Outcome {
    if n.counts[tid] >= b.max_steps {
        return Outcome::Truncated;
    }
    let mut cur = n.clone();
    cur.counts[tid] += 1;
    let mut locals = 0;
    loop {
        *clock += 1;
        let check = (*clock).is_multiple_of(b.sample);
        cur.schedule.push(tid);
        match micro(m, &cur.ms, &cur.ls, tid, check) {
            Ok((ms, ls, _, vs)) => {
                cur.ms = ms;
                cur.ls = ls;
                cur.log.absorb(vs);
            }
            Err(f) => {
                cur.log.faults.push(f);
                return Outcome::Fault(cur);
            }
        }
        if !m.pending_is_local(&cur.ms, tid) {
            break;
        }
        locals += 1;
        if locals > LOCAL_LIMIT {
            return Outcome::Truncated;
        }
    }
    if b.sample > 1 {
        cur.log.absorb(check_axioms(m, &cur.ls, &cur.ms));
    }
    Outcome::Ok(cur)
}

/// Per-reader data that must match for two readers to be swapped.
fn reader_signature(ms: &MachineState, ls: &LogicalState, t: Tid) -> impl Ord {
    let observed: Vec<usize> = ls
        .obs
        .iter()
        .filter(|(_, s)| s.contains(&crate::oracle::Obs::Iterator(t)))
        .map(|(o, _)| *o)
        .collect();
    let pending: Vec<usize> = ls.free_map.iter().filter(|(_, ts)| ts.contains(&t)).map(|(o, _)| *o).collect();
    let undef: Vec<usize> = ls.undef.iter().filter(|(u, _)| *u == t).map(|(_, v)| *v).collect();
    (
        ms.pcs[t],
        ms.phases[t],
        ms.stacks[t].clone(),
        ms.readers.contains(&t),
        ms.bounding.contains(&t),
        observed,
        pending,
        undef,
    )
}

/// `perm[old] = new`, sorting each class of interchangeable readers.
fn canonical_perm(m: &Machine, ms: &MachineState, ls: &LogicalState) -> Vec<Tid> {
    let mut perm: Vec<Tid> = (0..m.threads.len()).collect();
    let decls: BTreeSet<usize> =
        m.threads.iter().filter(|t| t.kind == ThreadKind::Reader).map(|t| t.decl).collect();
    for d in decls {
        let slots: Vec<Tid> =
            (0..m.threads.len()).filter(|&t| m.threads[t].kind == ThreadKind::Reader && m.threads[t].decl == d).collect();
        let mut sorted = slots.clone();
        sorted.sort_by_cached_key(|&t| reader_signature(ms, ls, t));
        for (new, old) in slots.iter().zip(sorted) {
            perm[old] = *new;
        }
    }
    perm
}

fn permute_machine(ms: &MachineState, perm: &[Tid]) -> MachineState {
    let mut out = ms.clone();
    for (old, &new) in perm.iter().enumerate() {
        out.stacks[new] = ms.stacks[old].clone();
        out.pcs[new] = ms.pcs[old];
        out.phases[new] = ms.phases[old];
    }
    out.lock = ms.lock.map(|t| perm[t]);
    out.readers = ms.readers.iter().map(|t| perm[*t]).collect();
    out.bounding = ms.bounding.iter().map(|t| perm[*t]).collect();
    out
}

fn state_key(m: &Machine, ms: &MachineState, ls: &LogicalState) -> u128 {
    let perm = canonical_perm(m, ms, ls);
    let (cm, cl) = if perm.iter().enumerate().all(|(i, p)| i == *p) {
        (ms.clone(), ls.clone())
    } else {
        (permute_machine(ms, &perm), ls.permuted(&perm))
    };
    let mut lo = DefaultHasher::new();
    (&cm, &cl).hash(&mut lo);
    let mut hi = DefaultHasher::new();
    0x5eedu16.hash(&mut hi);
    (&cm, &cl).hash(&mut hi);
    ((hi.finish() as u128) << 64) | lo.finish() as u128
}

pub fn explore(p: &Program, heap: &HeapSpec, bounds: &ExploreBounds) -> Result<ExploreReport, ExploreError> {
    if bounds.max_steps == 0 || bounds.max_heap_nodes == 0 || bounds.sample == 0 {
        return Err(ExploreError::BadBounds);
    }
    if heap.len() > bounds.max_heap_nodes {
        return Err(ExploreError::HeapTooLarge { got: heap.len(), bound: bounds.max_heap_nodes });
    }
    let m = Machine::new(p, Some(bounds.reader_count));
    let ms = m.init(heap)?;
    let ls = LogicalState::initial(&m, &ms);
    let mut report = ExploreReport::default();
    let mut seen_reasons: BTreeSet<String> = BTreeSet::new();
    let mut record = |n: &Node, report: &mut ExploreReport| {
        let f = n.finding();
        if let Verdict::Unsafe { reasons } = &f.verdict {
            let before = seen_reasons.len();
            seen_reasons.extend(reasons.iter().cloned());
            let new = seen_reasons.len() > before;
            if new {
                report.violations.push(f);
            }
        }
    };
    let mut log = Log::default();
    log.absorb(check_axioms(&m, &ls, &ms));
    let root = Node { counts: vec![0; m.threads.len()], ms, ls, schedule: vec![], log };
    record(&root, &mut report);
    let mut visited: HashSet<u128> = HashSet::new();
    if bounds.dedup {
        visited.insert(state_key(&m, &root.ms, &root.ls));
    }
    let mut stack = vec![root];
    let mut clock = 0usize;
    while let Some(n) = stack.pop() {
        report.states_explored += 1;
        let enabled = m.enabled_threads(&n.ms);
        if enabled.is_empty() {
            if m.all_done(&n.ms) {
                report.schedules_completed += 1;
            } else {
                let mut stuck = n.clone();
                stuck.log.absorb(vec![Violation { axiom: "DEADLOCK", witnesses: vec![] }]);
                record(&stuck, &mut report);
            }
            continue;
        }
        for &tid in enabled.iter().rev() {
            match transition(&m, &n, tid, bounds, &mut clock) {
                Outcome::Truncated => report.truncated += 1,
                Outcome::Fault(f) => record(&f, &mut report),
                Outcome::Ok(next) => {
                    if next.log.violations.len() > n.log.violations.len() {
                        record(&next, &mut report);
                    }
                    if bounds.dedup && !visited.insert(state_key(&m, &next.ms, &next.ls)) {
                        continue;
                    }
                    stack.push(next);
                }
            }
        }
    }
    report.exhausted = report.truncated == 0;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceLine {
    pub step: usize,
    pub tid: Tid,
    pub rule: &'static str,
    pub hash: u64,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}, {}, {}, {:016x}⟩", self.step, self.tid, self.rule, self.hash)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Replay {
    pub trace: Vec<TraceLine>,
    pub verdict: Verdict,
    pub faults: Vec<Fault>,
    pub violations: Vec<Violation>,
    pub final_state: MachineState,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("initial heap rejected: {0}")]
    Init(#[from] InitError),
    #[error("schedule diverges at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
}

/// Runs `schedule` deterministically. Axiom violations are recorded and
/// the run continues; a machine fault ends it.
pub fn replay(p: &Program, heap: &HeapSpec, readers: usize, schedule: &[Tid]) -> Result<Replay, ReplayError> {
    let m = Machine::new(p, Some(readers));
    let mut ms = m.init(heap)?;
    let mut ls = LogicalState::initial(&m, &ms);
    let mut trace = Vec::new();
    let mut log = Log::default();
    log.absorb(check_axioms(&m, &ls, &ms));
    for (i, &tid) in schedule.iter().enumerate() {
        if tid >= m.threads.len() {
            return Err(ReplayError::Divergence { step: i, reason: format!("no thread {tid}") });
        }
        if !m.enabled(&ms, tid) {
            let reason = match m.pending(&ms, tid) {
                None => format!("thread {tid} has finished"),
                Some(ins) => format!("thread {tid} is blocked at `{}`", crate::machine::describe(ins)),
            };
            return Err(ReplayError::Divergence { step: i, reason });
        }
        match micro(&m, &ms, &ls, tid, true) {
            Ok((ms2, ls2, rule, vs)) => {
                trace.push(TraceLine { step: i, tid, rule, hash: ms2.hash64() });
                ms = ms2;
                ls = ls2;
                log.absorb(vs);
            }
            Err(f) => {
                trace.push(TraceLine { step: i, tid, rule: "Fault", hash: ms.hash64() });
                log.faults.push(f);
                if i + 1 < schedule.len() {
                    return Err(ReplayError::Divergence { step: i + 1, reason: "the run already faulted".into() });
                }
                break;
            }
        }
    }
    if log.faults.is_empty() && !m.all_done(&ms) && m.enabled_threads(&ms).is_empty() {
        log.absorb(vec![Violation { axiom: "DEADLOCK", witnesses: vec![] }]);
    }
    Ok(Replay { verdict: log.verdict(), trace, faults: log.faults, violations: log.violations, final_state: ms })
}
