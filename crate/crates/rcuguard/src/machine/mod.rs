//! Small-step abstract machine for RCU programs.
//!
//! State is `(s, h, l, rt, R, B)` plus per-thread program counters. One call
//! to [`Machine::step`] performs exactly one atomic action of one thread;
//! interleaving is left to the caller.

mod compile;
mod heap;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

use crate::lang::{BoolExpr, FieldKind, FieldTypeTable, Operand, Program, ThreadKind};

pub use compile::{compile_blocks, Instr};
pub use heap::{HeapSpec, HeapSpecError, SpecNode, SpecVal};

pub type Tid = usize;
pub type Loc = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Val {
    Loc(Loc),
    Null,
    Int(i64),
    Undef,
}

impl Val {
    pub fn loc(self) -> Option<Loc> {
        match self {
            Val::Loc(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Loc(l) => write!(f, "#{l}"),
            Val::Null => f.write_str("null"),
            Val::Int(n) => write!(f, "{n}"),
            Val::Undef => f.write_str("undef"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Node {
    /// Indexed by the field table's sorted order.
    pub fields: Vec<Val>,
    pub freed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Outside,
    InRead,
    InWrite,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MachineState {
    /// `stacks[tid][var]`, variables numbered per thread.
    pub stacks: Vec<Vec<Val>>,
    pub heap: Vec<Node>,
    pub lock: Option<Tid>,
    pub root: Loc,
    pub readers: BTreeSet<Tid>,
    pub bounding: BTreeSet<Tid>,
    pub pcs: Vec<usize>,
    pub phases: Vec<Phase>,
}

impl MachineState {
    pub fn is_live(&self, o: Loc) -> bool {
        self.heap.get(o).is_some_and(|n| !n.freed)
    }

    pub fn hash64(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Error)]
pub enum FaultKind {
    #[error("use after free")]
    UseAfterFree,
    #[error("null dereference")]
    NullDeref,
    #[error("use of an undefined value")]
    UndefinedValue,
    #[error("double free")]
    DoubleFree,
    #[error("root overwrite")]
    RootOverwrite,
    #[error("mutation inside a read-side critical section")]
    ReadSideMutation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Error)]
#[error("{kind} in thread {tid} at `{instr}`")]
pub struct Fault {
    pub kind: FaultKind,
    pub tid: Tid,
    pub instr: String,
}

/// What a step did, for the logical-state monitor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Action {
    ReadBegin,
    ReadEnd,
    WriteBegin,
    WriteEnd,
    SyncStart,
    SyncStop,
    /// Stack write; `from_heap` when the value came from an rcu field.
    Assign { var: usize, val: Val, from_heap: bool },
    HeapWrite { loc: Loc, field: usize, old: Val, new: Val },
    DataWrite { loc: Loc, field: usize },
    Alloc { var: usize, loc: Loc },
    Free { var: usize, loc: Loc },
    Branch,
    Nop,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Step {
    pub state: MachineState,
    pub action: Action,
    pub rule: &'static str,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InitError {
    #[error("empty heap: the first node is the root")]
    Empty,
    #[error("location `{0}` declared twice")]
    Duplicate(String),
    #[error("unknown location `{0}`")]
    UnknownLoc(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{field}` of `{loc}` has the wrong kind of value")]
    KindMismatch { loc: String, field: String },
    #[error("`{0}` has more than one parent")]
    SharedNode(String),
    #[error("the root `{0}` has a parent")]
    RootHasParent(String),
    #[error("`{0}` is unreachable from the root")]
    Unreachable(String),
}

#[derive(Clone, Debug)]
pub struct ThreadInfo {
    pub name: String,
    /// Index of the declaration this thread instantiates; readers sharing a
    /// declaration are interchangeable.
    pub decl: usize,
    pub kind: ThreadKind,
    pub vars: Vec<String>,
    var_ix: HashMap<String, usize>,
    pub code: Vec<Instr>,
}

impl ThreadInfo {
    pub fn var(&self, name: &str) -> Option<usize> {
        self.var_ix.get(name).copied()
    }
}

/// The static part of a run: compiled code and layout.
#[derive(Clone, Debug)]
pub struct Machine {
    pub fields: FieldTypeTable,
    pub field_names: Vec<String>,
    pub root_var: String,
    pub threads: Vec<ThreadInfo>,
}

fn thread_info(decl_ix: usize, d: &crate::lang::ThreadDecl, name: String, root: &str) -> ThreadInfo {
    let mut vars: BTreeSet<String> = d.pointer_vars();
    vars.extend(d.bool_vars());
    vars.extend(d.data_vars());
    for b in &d.blocks {
        vars.extend(crate::lang::free_vars(&b.body));
    }
    vars.remove(root);
    let vars: Vec<String> = vars.into_iter().collect();
    let var_ix = vars.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
    ThreadInfo { name, decl: decl_ix, kind: d.kind, vars, var_ix, code: compile_blocks(&d.blocks) }
}

impl Machine {
    /// Writers get the lowest thread ids. With `readers = Some(n)`, exactly
    /// `n` reader threads are spawned round-robin over the reader
    /// declarations; otherwise each declaration's replication count is used.
    pub fn new(p: &Program, readers: Option<usize>) -> Machine {
        let mut threads = Vec::new();
        for (i, d) in p.threads.iter().enumerate().filter(|(_, d)| d.kind == ThreadKind::Writer) {
            threads.push(thread_info(i, d, d.name.clone(), &p.root_var));
        }
        let decls: Vec<(usize, &crate::lang::ThreadDecl)> =
            p.threads.iter().enumerate().filter(|(_, d)| d.kind == ThreadKind::Reader).collect();
        let mut order = Vec::new();
        match readers {
            Some(n) if !decls.is_empty() => order.extend((0..n).map(|k| decls[k % decls.len()])),
            Some(_) => {}
            None => {
                for &(i, d) in &decls {
                    order.extend(std::iter::repeat_n((i, d), d.count.max(1)));
                }
            }
        }
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for (i, d) in order {
            let k = seen.entry(i).or_default();
            threads.push(thread_info(i, d, format!("{}#{}", d.name, k), &p.root_var));
            *k += 1;
        }
        Machine {
            field_names: p.field_types.fields.keys().cloned().collect(),
            fields: p.field_types.clone(),
            root_var: p.root_var.clone(),
            threads,
        }
    }

    pub fn field_index(&self, f: &str) -> Option<usize> {
        self.fields.index_of(f)
    }

    fn is_rcu_ix(&self, i: usize) -> bool {
        self.fields.is_rcu(&self.field_names[i])
    }

    /// Iterates `(field index, value)` over a node's rcu links.
    pub fn rcu_links<'a>(&'a self, n: &'a Node) -> impl Iterator<Item = (usize, Val)> + 'a {
        n.fields.iter().enumerate().filter(move |(i, _)| self.is_rcu_ix(*i)).map(|(i, v)| (i, *v))
    }

    pub fn init(&self, spec: &HeapSpec) -> Result<MachineState, InitError> {
        let Some(root) = spec.nodes.first() else {
            return Err(InitError::Empty);
        };
        let mut names: HashMap<&str, usize> = HashMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if names.insert(&n.name, i).is_some() {
                return Err(InitError::Duplicate(n.name.clone()));
            }
        }
        let mut heap = Vec::new();
        let mut parents = vec![0usize; spec.nodes.len()];
        for n in &spec.nodes {
            for f in n.fields.keys() {
                if self.field_index(f).is_none() {
                    return Err(InitError::UnknownField(f.clone()));
                }
            }
            let mut fields = Vec::new();
            for f in &self.field_names {
                let kind = self.fields.kind(f).unwrap_or(FieldKind::Normal);
                let v = match (kind, n.fields.get(f)) {
                    (FieldKind::Rcu, None | Some(SpecVal::Null)) => Val::Null,
                    (FieldKind::Rcu, Some(SpecVal::Ref(r))) => {
                        let t = *names.get(r.as_str()).ok_or_else(|| InitError::UnknownLoc(r.clone()))?;
                        parents[t] += 1;
                        Val::Loc(t)
                    }
                    (FieldKind::Normal, None) => Val::Int(0),
                    (FieldKind::Normal, Some(SpecVal::Int(k))) => Val::Int(*k),
                    _ => return Err(InitError::KindMismatch { loc: n.name.clone(), field: f.clone() }),
                };
                fields.push(v);
            }
            heap.push(Node { fields, freed: false });
        }
        if parents[0] > 0 {
            return Err(InitError::RootHasParent(root.name.clone()));
        }
        if let Some(i) = parents.iter().position(|&p| p > 1) {
            return Err(InitError::SharedNode(spec.nodes[i].name.clone()));
        }
        let st = MachineState {
            stacks: self.threads.iter().map(|t| vec![Val::Undef; t.vars.len()]).collect(),
            heap,
            lock: None,
            root: 0,
            readers: BTreeSet::new(),
            bounding: BTreeSet::new(),
            pcs: vec![0; self.threads.len()],
            phases: vec![Phase::Outside; self.threads.len()],
        };
        let reach = self.reachable(&st);
        if let Some(i) = (0..spec.nodes.len()).find(|i| !reach.contains(i)) {
            return Err(InitError::Unreachable(spec.nodes[i].name.clone()));
        }
        Ok(st)
    }

    /// Locations reachable from the root through rcu links of live nodes.
    pub fn reachable(&self, st: &MachineState) -> BTreeSet<Loc> {
        let mut seen = BTreeSet::new();
        let mut todo = vec![st.root];
        while let Some(o) = todo.pop() {
            if !st.is_live(o) || !seen.insert(o) {
                continue;
            }
            todo.extend(self.rcu_links(&st.heap[o]).filter_map(|(_, v)| v.loc()));
        }
        seen
    }

    pub fn done(&self, st: &MachineState, tid: Tid) -> bool {
        st.pcs[tid] >= self.threads[tid].code.len()
    }

    pub fn all_done(&self, st: &MachineState) -> bool {
        (0..self.threads.len()).all(|t| self.done(st, t))
    }

    pub fn pending(&self, st: &MachineState, tid: Tid) -> Option<&Instr> {
        self.threads.get(tid)?.code.get(st.pcs[tid])
    }

    pub fn enabled(&self, st: &MachineState, tid: Tid) -> bool {
        match self.pending(st, tid) {
            None => false,
            Some(Instr::WriteBegin(_)) => st.lock.is_none(),
            Some(Instr::WriteEnd) => st.lock == Some(tid),
            Some(Instr::SyncStart | Instr::SyncStop | Instr::Free { .. }) => st.bounding.is_empty(),
            Some(_) => true,
        }
    }

    pub fn enabled_threads(&self, st: &MachineState) -> Vec<Tid> {
        (0..self.threads.len()).filter(|&t| self.enabled(st, t)).collect()
    }

    /// Is the pending action of `tid` invisible to other threads?
    pub fn pending_is_local(&self, st: &MachineState, tid: Tid) -> bool {
        self.pending(st, tid).is_some_and(Instr::is_local)
    }

    /// Performs the pending action of `tid`. Callers must check
    /// [`Machine::enabled`] first.
    pub fn step(&self, st: &MachineState, tid: Tid) -> Result<Step, Fault> {
        let th = &self.threads[tid];
        let instr = th.code.get(st.pcs[tid]).expect("step of a finished thread");
        let fault = |kind| Fault { kind, tid, instr: describe(instr) };
        let var = |x: &str| th.var(x).expect("variable indexed at compile time");
        let mut s = st.clone();
        s.pcs[tid] += 1;
        let get = |x: &str| -> Val {
            if x == self.root_var {
                Val::Loc(st.root)
            } else {
                st.stacks[tid][var(x)]
            }
        };
        // The live object `x` points to.
        let deref = |x: &str| -> Result<Loc, Fault> {
            match get(x) {
                Val::Loc(o) if st.is_live(o) => Ok(o),
                Val::Loc(_) => Err(fault(FaultKind::UseAfterFree)),
                Val::Null => Err(fault(FaultKind::NullDeref)),
                Val::Int(_) | Val::Undef => Err(fault(FaultKind::UndefinedValue)),
            }
        };
        let field = |f: &str| self.field_index(f).expect("field checked by parser");
        let int = |o: &Operand| -> Result<i64, Fault> {
            match o {
                Operand::Int(n) => Ok(*n),
                Operand::Var(v) => match get(v) {
                    Val::Int(n) => Ok(n),
                    _ => Err(fault(FaultKind::UndefinedValue)),
                },
            }
        };
        let writing = st.phases[tid] == Phase::InWrite && st.lock == Some(tid);
        let mutation = || -> Result<(), Fault> {
            if writing {
                Ok(())
            } else {
                Err(fault(FaultKind::ReadSideMutation))
            }
        };
        let (action, rule) = match instr {
            Instr::ReadBegin(binder) => {
                s.readers.insert(tid);
                s.phases[tid] = Phase::InRead;
                if let Some(b) = binder {
                    s.stacks[tid][var(&b.var)] = Val::Loc(st.root);
                }
                (Action::ReadBegin, "RCU-RBegin")
            }
            Instr::ReadEnd => {
                s.readers.remove(&tid);
                s.bounding.remove(&tid);
                s.phases[tid] = Phase::Outside;
                (Action::ReadEnd, "RCU-REnd")
            }
            Instr::WriteBegin(binder) => {
                s.lock = Some(tid);
                s.phases[tid] = Phase::InWrite;
                if let Some(b) = binder {
                    s.stacks[tid][var(&b.var)] = Val::Loc(st.root);
                }
                (Action::WriteBegin, "RCU-WBegin")
            }
            Instr::WriteEnd => {
                s.lock = None;
                s.phases[tid] = Phase::Outside;
                (Action::WriteEnd, "RCU-WEnd")
            }
            Instr::RootRead { y } => {
                let v = Val::Loc(st.root);
                s.stacks[tid][var(y)] = v;
                (Action::Assign { var: var(y), val: v, from_heap: false }, "SUpdt")
            }
            Instr::VarRead { z, x } => {
                let v = get(x);
                s.stacks[tid][var(z)] = v;
                (Action::Assign { var: var(z), val: v, from_heap: false }, "SUpdt")
            }
            Instr::FieldRead { z, x, f } | Instr::DataRead { v: z, x, f } => {
                let o = deref(x)?;
                let val = st.heap[o].fields[field(f)];
                if val == Val::Undef {
                    return Err(fault(FaultKind::UseAfterFree));
                }
                s.stacks[tid][var(z)] = val;
                let from_heap = matches!(instr, Instr::FieldRead { .. });
                (Action::Assign { var: var(z), val, from_heap }, "HRead")
            }
            Instr::FieldWrite { x, f, rhs } => {
                mutation()?;
                let o = deref(x)?;
                let new = match rhs {
                    None => Val::Null,
                    Some(y) => match get(y) {
                        Val::Loc(l) if l == st.root => return Err(fault(FaultKind::RootOverwrite)),
                        Val::Loc(l) if !st.is_live(l) => return Err(fault(FaultKind::UseAfterFree)),
                        v @ (Val::Loc(_) | Val::Null) => v,
                        _ => return Err(fault(FaultKind::UndefinedValue)),
                    },
                };
                let fi = field(f);
                let old = st.heap[o].fields[fi];
                s.heap[o].fields[fi] = new;
                (Action::HeapWrite { loc: o, field: fi, old, new }, "HUpdt")
            }
            Instr::DataWrite { x, f, v } => {
                mutation()?;
                let o = deref(x)?;
                let n = int(v)?;
                let fi = field(f);
                s.heap[o].fields[fi] = Val::Int(n);
                (Action::DataWrite { loc: o, field: fi }, "HUpdt")
            }
            Instr::Alloc { x } => {
                mutation()?;
                if get(x) == Val::Loc(st.root) {
                    return Err(fault(FaultKind::RootOverwrite));
                }
                let o = st.heap.len();
                let fields = self
                    .field_names
                    .iter()
                    .map(|f| if self.fields.is_rcu(f) { Val::Null } else { Val::Int(0) })
                    .collect();
                s.heap.push(Node { fields, freed: false });
                s.stacks[tid][var(x)] = Val::Loc(o);
                (Action::Alloc { var: var(x), loc: o }, "HAlloc")
            }
            Instr::Free { x } => {
                mutation()?;
                let o = match get(x) {
                    Val::Loc(o) if o == st.root => return Err(fault(FaultKind::RootOverwrite)),
                    Val::Loc(o) if !st.is_live(o) => return Err(fault(FaultKind::DoubleFree)),
                    Val::Loc(o) => o,
                    Val::Null => return Err(fault(FaultKind::NullDeref)),
                    _ => return Err(fault(FaultKind::UndefinedValue)),
                };
                let n = &mut s.heap[o];
                n.freed = true;
                n.fields.iter_mut().for_each(|v| *v = Val::Undef);
                (Action::Free { var: var(x), loc: o }, "Free")
            }
            Instr::SyncStart => {
                mutation()?;
                s.bounding = st.readers.clone();
                (Action::SyncStart, "RCU-SStart")
            }
            Instr::SyncStop => {
                mutation()?;
                (Action::SyncStop, "RCU-SStop")
            }
            Instr::BoolAssign { b, expr } => {
                let truth = |v: &str| match get(v) {
                    Val::Int(n) => Ok(n != 0),
                    _ => Err(fault(FaultKind::UndefinedValue)),
                };
                let r = match expr {
                    BoolExpr::Const(c) => *c,
                    BoolExpr::Var(v) => truth(v)?,
                    BoolExpr::Not(v) => !truth(v)?,
                    BoolExpr::Cmp(op, a, c) => op.eval(int(a)?, int(c)?),
                };
                let v = Val::Int(r as i64);
                s.stacks[tid][var(b)] = v;
                (Action::Assign { var: var(b), val: v, from_heap: false }, "SUpdt")
            }
            Instr::DataSet { v, value } => {
                let n = Val::Int(int(value)?);
                s.stacks[tid][var(v)] = n;
                (Action::Assign { var: var(v), val: n, from_heap: false }, "SUpdt")
            }
            Instr::BrBool { b, when, target } => {
                let c = match get(b) {
                    Val::Int(n) => n != 0,
                    _ => return Err(fault(FaultKind::UndefinedValue)),
                };
                if c == *when {
                    s.pcs[tid] = *target;
                }
                (Action::Branch, "Branch")
            }
            Instr::BrFieldNull { x, f, when, target } => {
                let o = deref(x)?;
                let v = st.heap[o].fields[field(f)];
                if v == Val::Undef {
                    return Err(fault(FaultKind::UseAfterFree));
                }
                if (v == Val::Null) == *when {
                    s.pcs[tid] = *target;
                }
                (Action::Branch, "Branch")
            }
            Instr::BrFieldEq { x, f, z, when, target } => {
                let o = deref(x)?;
                let v = st.heap[o].fields[field(f)];
                if v == Val::Undef {
                    return Err(fault(FaultKind::UseAfterFree));
                }
                if (v == get(z)) == *when {
                    s.pcs[tid] = *target;
                }
                (Action::Branch, "Branch")
            }
            Instr::Jump(t) => {
                s.pcs[tid] = *t;
                (Action::Branch, "Branch")
            }
            Instr::Nop => (Action::Nop, "Skip"),
        };
        Ok(Step { state: s, action, rule })
    }
}

/// One-line rendering of an instruction for diagnostics.
pub fn describe(i: &Instr) -> String {
    match i {
        Instr::ReadBegin(_) => "rcu_read {".into(),
        Instr::ReadEnd | Instr::WriteEnd => "}".into(),
        Instr::WriteBegin(_) => "rcu_write {".into(),
        Instr::RootRead { y } => format!("{y} = <root>"),
        Instr::VarRead { z, x } => format!("{z} = {x}"),
        Instr::FieldRead { z, x, f } | Instr::DataRead { v: z, x, f } => format!("{z} = {x}.{f}"),
        Instr::FieldWrite { x, f, rhs } => format!("{x}.{f} = {}", rhs.as_deref().unwrap_or("null")),
        Instr::DataWrite { x, f, v } => format!("{x}.{f} = {v}"),
        Instr::Alloc { x } => format!("{x} = new"),
        Instr::Free { x } => format!("free({x})"),
        Instr::SyncStart => "sync_start".into(),
        Instr::SyncStop => "sync_stop".into(),
        Instr::BoolAssign { b, expr } => format!("{b} = {expr}"),
        Instr::DataSet { v, value } => format!("{v} = {value}"),
        Instr::BrBool { b, .. } => format!("branch on {b}"),
        Instr::BrFieldNull { x, f, .. } => format!("branch on {x}.{f} == null"),
        Instr::BrFieldEq { x, f, z, .. } => format!("branch on {x}.{f} == {z}"),
        Instr::Jump(t) => format!("jump {t}"),
        Instr::Nop => "skip".into(),
    }
}
