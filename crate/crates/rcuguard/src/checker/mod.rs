//! The flow-sensitive RCU type checker.
//!
//! Write-side blocks are checked with the full `rcuItr ρ N` types; read-side
//! blocks only track bare iterators and reject every mutation. Control flow
//! joins widen paths and field maps pointwise; loops are checked against
//! their `@invariant` annotations.

mod atomic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::lang::{Block, BlockKind, FieldTypeTable, Program, Span, Stmt, ThreadDecl};
use crate::paths::{FieldKey, FieldMap, Path, PathSeg, Target, DEFAULT_ALIAS_BOUND};
use crate::typesys::{env_reindex, env_subtype, gate_violators, Gate, RcuType, TypeEnv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    Write,
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckOptions {
    /// Enumeration bound handed to `may_alias`.
    pub alias_bound: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { alias_bound: DEFAULT_ALIAS_BOUND }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub rule: String,
    pub span: Span,
    pub message: String,
    pub env_before: TypeEnv,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thread: Option<String>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.thread {
            write!(f, "[{t}] ")?;
        }
        write!(f, "{}: {}: {}", self.span, self.rule, self.message)
    }
}

/// One application of a typing rule, for tracing which rule justified a
/// statement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RuleUse {
    pub span: Span,
    pub stmt: String,
    pub rule: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ThreadReport {
    pub name: String,
    pub diagnostic: Option<Diagnostic>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProgramReport {
    pub threads: Vec<ThreadReport>,
    /// Environment at each `$assert{label}` site (last visit wins).
    pub sites: BTreeMap<String, TypeEnv>,
    pub rules: Vec<RuleUse>,
}

impl ProgramReport {
    pub fn ok(&self) -> bool {
        self.threads.iter().all(|t| t.diagnostic.is_none())
    }

    pub fn diagnostics(&self) -> impl Iterator<Item = &Diagnostic> {
        self.threads.iter().filter_map(|t| t.diagnostic.as_ref())
    }

    /// Rules used at statements whose text is exactly `stmt`.
    pub fn rules_at<'a>(&'a self, stmt: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.rules.iter().filter(move |r| r.stmt == stmt).map(|r| r.rule.as_str())
    }
}

pub(crate) struct Fail {
    pub rule: &'static str,
    pub message: String,
}

/// Checker state: options plus what was observed along the way.
pub struct Checker<'p> {
    fields: &'p FieldTypeTable,
    opts: CheckOptions,
    sites: BTreeMap<String, TypeEnv>,
    rules: Vec<RuleUse>,
}

const READ_FIXPOINT_LIMIT: usize = 32;

impl<'p> Checker<'p> {
    pub fn new(fields: &'p FieldTypeTable, opts: CheckOptions) -> Self {
        Checker { fields, opts, sites: BTreeMap::new(), rules: Vec::new() }
    }

    fn rule(&mut self, rule: &str, s: &Stmt) {
        self.rules.push(RuleUse { span: s.span(), stmt: s.to_string(), rule: rule.to_string() });
    }

    fn diag(env: &TypeEnv, s: &Stmt, f: Fail) -> Diagnostic {
        Diagnostic { rule: f.rule.to_string(), span: s.span(), message: f.message, env_before: env.clone(), thread: None }
    }

    pub fn sites(&self) -> &BTreeMap<String, TypeEnv> {
        &self.sites
    }

    pub fn check_atomic(&mut self, env: &TypeEnv, s: &Stmt, mode: CheckMode) -> Result<TypeEnv, Diagnostic> {
        assert!(s.is_atomic(), "check_atomic on a compound statement");
        self.atomic(env, s, mode).map_err(|f| Self::diag(env, s, f))
    }

    pub fn check_stmt(&mut self, env: &TypeEnv, s: &Stmt, mode: CheckMode) -> Result<TypeEnv, Diagnostic> {
        let err = |rule: &'static str, msg: String| Self::diag(env, s, Fail { rule, message: msg });
        match s {
            Stmt::Seq(..) => {
                let items = s.flatten();
                let mut cur = env.clone();
                let mut i = 0;
                while i < items.len() {
                    let st = items[i];
                    if mode == CheckMode::Write
                        && matches!(st, Stmt::SyncStart { .. })
                        && matches!(items.get(i + 1), Some(Stmt::SyncStop { .. }))
                    {
                        self.rule("T-Sync", st);
                        cur = sync(&cur);
                        i += 2;
                        continue;
                    }
                    cur = self.check_stmt(&cur, st, mode)?;
                    i += 1;
                }
                Ok(cur)
            }
            Stmt::IfBool { b, then, els, .. } => {
                if env.get(b) != Some(&RcuType::Bool) {
                    return Err(err("T-Branch2", format!("`{b}` is not a boolean")));
                }
                self.rule("T-Branch2", s);
                let t = self.check_stmt(env, then, mode)?;
                let e = self.check_stmt(env, els, mode)?;
                join_env(&t, &e).map_err(|m| err("T-Branch2", m))
            }
            Stmt::IfFieldEq { x, f, z, then, els, .. } => {
                self.rule("T-Branch1", s);
                let (te, ee) = match mode {
                    CheckMode::Read => {
                        if env.get(x) != Some(&RcuType::RcuItrBare) {
                            return Err(err("T-Branch1", format!("`{x}` is not an rcuItr")));
                        }
                        (env.clone(), env.clone())
                    }
                    CheckMode::Write => {
                        if !matches!(env.get(x), Some(RcuType::RcuItr(..))) {
                            return Err(err("T-Branch1", format!("`{x}` is not an rcuItr")));
                        }
                        refine_eq(env, x, f, z)
                    }
                };
                let t = self.check_stmt(&te, then, mode)?;
                let e = self.check_stmt(&ee, els, mode)?;
                join_env(&t, &e).map_err(|m| err("T-Branch1", m))
            }
            Stmt::IfFieldNull { x, f, then, els, .. } => {
                self.rule("T-Branch3", s);
                let te = match (mode, env.get(x)) {
                    (CheckMode::Read, Some(RcuType::RcuItrBare)) => env.clone(),
                    (CheckMode::Write, Some(RcuType::RcuItr(..))) => refine_null(env, x, f),
                    _ => return Err(err("T-Branch3", format!("`{x}` is not an rcuItr"))),
                };
                let t = self.check_stmt(&te, then, mode)?;
                let e = self.check_stmt(env, els, mode)?;
                join_env(&t, &e).map_err(|m| err("T-Branch3", m))
            }
            Stmt::WhileBool { b, body, annot, .. } => {
                if env.get(b) != Some(&RcuType::Bool) {
                    return Err(err("T-Loop1", format!("`{b}` is not a boolean")));
                }
                self.rule("T-Loop1", s);
                self.check_loop(env, s, body, annot.as_ref(), mode, "T-Loop1", None)
            }
            Stmt::WhileFieldNonNull { x, f, body, annot, .. } => {
                match (mode, env.get(x)) {
                    (CheckMode::Read, Some(RcuType::RcuItrBare)) | (CheckMode::Write, Some(RcuType::RcuItr(..))) => {}
                    _ => return Err(err("T-Loop2", format!("`{x}` is not an rcuItr"))),
                }
                self.rule("T-Loop2", s);
                self.check_loop(env, s, body, annot.as_ref(), mode, "T-Loop2", Some((x, f)))
            }
            _ => self.check_atomic(env, s, mode),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn check_loop(
        &mut self,
        env: &TypeEnv,
        s: &Stmt,
        body: &Stmt,
        annot: Option<&crate::lang::LoopAnnotation>,
        mode: CheckMode,
        rule: &'static str,
        shape: Option<(&String, &String)>,
    ) -> Result<TypeEnv, Diagnostic> {
        let err = |env: &TypeEnv, msg: String| Self::diag(env, s, Fail { rule, message: msg });
        let exit = |inv: &TypeEnv| match shape {
            Some((x, f)) if mode == CheckMode::Write => refine_null(inv, x, f),
            _ => inv.clone(),
        };

        if mode == CheckMode::Read {
            // Bare iterators form a tiny lattice; iterate to a fixpoint.
            let mut cur = env.clone();
            for _ in 0..READ_FIXPOINT_LIMIT {
                let next = self.check_stmt(&cur, body, mode)?;
                let joined = join_env(&cur, &next).map_err(|m| err(&cur, m))?;
                if joined == cur {
                    return Ok(cur);
                }
                cur = joined;
            }
            return Err(err(env, "loop environment did not stabilise".into()));
        }

        let Some(annot) = annot else {
            if body.touches_heap() {
                return Err(err(env, "loop reads or writes the heap but has no @invariant annotation".into()));
            }
            let after = self.check_stmt(env, body, mode)?;
            if !env_subtype(&after, env) {
                return Err(err(&after, format!("loop body does not preserve {{{env}}}")));
            }
            return Ok(exit(env));
        };

        let overrides: TypeEnv = annot
            .invariant
            .parse()
            .map_err(|e| Self::diag(env, s, Fail { rule: "artifact", message: format!("bad @invariant: {e}") }))?;
        let mut inv = env.clone();
        for (v, t) in overrides.iter() {
            inv.insert(v.clone(), t.clone());
        }
        let mentioned: BTreeSet<_> = inv.iterators().flat_map(|(_, p, _)| p.index_vars()).collect();
        for (k, _) in &annot.reindex {
            if !mentioned.contains(k) {
                return Err(Self::diag(
                    env,
                    s,
                    Fail { rule: "artifact", message: format!("@reindex variable `{k}` does not occur in the invariant") },
                ));
            }
        }

        let mut base = inv.clone();
        for (k, _) in &annot.reindex {
            base = base.with_zero(k);
        }
        if !env_subtype(env, &base) {
            return Err(err(env, format!("loop entry does not establish the invariant {{{base}}}")));
        }

        let mut after = self.check_stmt(&inv, body, mode)?;
        for (k, fs) in &annot.reindex {
            after = env_reindex(&after, k, fs);
        }
        if !env_subtype(&after, &inv) {
            return Err(err(&after, format!("loop body does not preserve the invariant {{{inv}}}")));
        }
        Ok(exit(&inv))
    }

    /// Check one critical-section block from its initial environment.
    pub fn check_block(&mut self, prog: &Program, thread: &ThreadDecl, block: &Block) -> Result<TypeEnv, Diagnostic> {
        let env0 = initial_env(prog, thread, block);
        let mode = match block.kind {
            BlockKind::Write => CheckMode::Write,
            BlockKind::Read => CheckMode::Read,
        };
        let out = self.check_stmt(&env0, &block.body, mode)?;
        if mode == CheckMode::Write {
            for g in Gate::ALL {
                if let Some(v) = gate_violators(&out, g).first() {
                    let what = match g {
                        Gate::NoFresh => "was allocated but never linked into the structure",
                        Gate::NoUnlinked => "was unlinked but never freed",
                        Gate::NoFreeable => "is freeable but was never freed",
                    };
                    return Err(Diagnostic {
                        rule: "ToRCUWrite".into(),
                        span: block.span,
                        message: format!("`{v}` {what} ({g} fails)"),
                        env_before: out.clone(),
                        thread: None,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn into_report(self, threads: Vec<ThreadReport>) -> ProgramReport {
        ProgramReport { threads, sites: self.sites, rules: self.rules }
    }
}

/// Γ0 for a block: the root, every pointer local as `undef`, booleans, and
/// the binder (if any) as an iterator at the root.
pub fn initial_env(prog: &Program, thread: &ThreadDecl, block: &Block) -> TypeEnv {
    let mut env = TypeEnv::new();
    for v in thread.pointer_vars() {
        env.insert(v, RcuType::Undef);
    }
    for v in thread.bool_vars() {
        env.insert(v, RcuType::Bool);
    }
    if let Some(b) = &block.binder {
        let t = match block.kind {
            BlockKind::Write => RcuType::itr(Path::eps()),
            BlockKind::Read => RcuType::RcuItrBare,
        };
        env.insert(b.var.clone(), t);
    }
    env.insert(prog.root_var.clone(), RcuType::RcuRoot);
    env
}

pub fn check_program(p: &Program, opts: &CheckOptions) -> ProgramReport {
    let mut ck = Checker::new(&p.field_types, opts.clone());
    let mut threads = Vec::new();
    for t in &p.threads {
        let mut diagnostic = None;
        for b in &t.blocks {
            if let Err(mut d) = ck.check_block(p, t, b) {
                d.thread = Some(t.name.clone());
                diagnostic = Some(d);
                break;
            }
        }
        threads.push(ThreadReport { name: t.name.clone(), diagnostic });
    }
    ck.into_report(threads)
}

/// Every unlinked binding becomes freeable.
fn sync(env: &TypeEnv) -> TypeEnv {
    let mut out = env.clone();
    for (_, t) in out.iter_mut() {
        if *t == RcuType::Unlinked {
            *t = RcuType::Freeable;
        }
    }
    out
}

/// Then/else environments for `if (x.f == z)`.
fn refine_eq(env: &TypeEnv, x: &str, f: &str, z: &str) -> (TypeEnv, TypeEnv) {
    let Some(RcuType::RcuItr(rho, n)) = env.get(x) else { unreachable!() };
    let Some((key, Target::Var(t))) = n.key_containing(f) else {
        return (env.clone(), env.clone());
    };
    if t != z || matches!(key, FieldKey::One(_)) {
        return (env.clone(), env.clone());
    }
    let all: BTreeSet<String> = key.fields().into_iter().map(str::to_string).collect();
    let rest: BTreeSet<String> = all.iter().filter(|g| *g != f).cloned().collect();
    let branch = |keep: BTreeSet<String>| {
        let mut out = env.clone();
        let mut n2 = n.clone();
        n2.remove_key(key);
        let new_key = FieldKey::of(keep.clone());
        let seg = new_key.as_seg();
        n2.insert_key(new_key, Target::Var(z.to_string()));
        out.insert(x, RcuType::RcuItr(rho.clone(), n2));
        // z sits at ρ.(f|g); anything below it inherits the refinement.
        if let Some(RcuType::RcuItr(pz, _)) = env.get(z) {
            let i = rho.segs().len();
            if pz.segs().len() == i + 1 && pz.starts_with(rho) && pz.segs()[i] == key.as_seg() {
                let pz = pz.clone();
                for (_, ty) in out.iter_mut() {
                    if let RcuType::RcuItr(p, _) = ty {
                        if p.starts_with(&pz) {
                            *p = p.with_seg(i, seg.clone());
                        }
                    }
                }
            }
        }
        out
    };
    (branch(BTreeSet::from([f.to_string()])), branch(rest))
}

/// Then-environment for `if (x.f == null)`.
fn refine_null(env: &TypeEnv, x: &str, f: &str) -> TypeEnv {
    let mut out = env.clone();
    if let Some(RcuType::RcuItr(rho, n)) = env.get(x) {
        if matches!(n.key_containing(f), None | Some((FieldKey::One(_), _))) {
            let mut n = n.clone();
            n.set(f, Target::Null);
            out.insert(x, RcuType::RcuItr(rho.clone(), n));
        }
    }
    out
}

/// Least common weakening of two environments, or why none exists.
pub fn join_env(a: &TypeEnv, b: &TypeEnv) -> Result<TypeEnv, String> {
    let mut out = TypeEnv::new();
    let names: BTreeSet<&String> = a.iter().map(|(x, _)| x).chain(b.iter().map(|(x, _)| x)).collect();
    for x in names {
        let t = match (a.get(x), b.get(x)) {
            (Some(ta), Some(tb)) => join_type(ta, tb)
                .ok_or_else(|| format!("`{x}` is `{ta}` on one path and `{tb}` on the other"))?,
            (Some(t), None) | (None, Some(t)) => {
                if !t.droppable() || *t == RcuType::Bool {
                    return Err(format!("`{x}: {t}` exists on only one path"));
                }
                RcuType::Undef
            }
            (None, None) => unreachable!(),
        };
        out.insert(x.clone(), t);
    }
    Ok(out)
}

fn join_type(a: &RcuType, b: &RcuType) -> Option<RcuType> {
    if a == b {
        return Some(a.clone());
    }
    match (a, b) {
        (RcuType::RcuItr(p1, n1), RcuType::RcuItr(p2, n2)) => Some(match join_path(p1, p2) {
            Some(p) => RcuType::RcuItr(p, join_map(n1, n2)),
            None => RcuType::Undef,
        }),
        (RcuType::RcuFresh(n1), RcuType::RcuFresh(n2)) => {
            // Fresh maps only ever lose entries.
            let n = join_map(n1, n2);
            let exact = n.entries().all(|(k, _)| matches!(k, FieldKey::One(_)));
            exact.then_some(RcuType::RcuFresh(n))
        }
        _ if a.droppable() && b.droppable() && *a != RcuType::Bool && *b != RcuType::Bool => Some(RcuType::Undef),
        _ => None,
    }
}

fn join_path(a: &Path, b: &Path) -> Option<Path> {
    if a.segs().len() != b.segs().len() {
        return None;
    }
    let mut segs = Vec::new();
    for (x, y) in a.segs().iter().zip(b.segs()) {
        if x == y {
            segs.push(x.clone());
        } else if x.is_unit() && y.is_unit() {
            let fs: BTreeSet<&str> = x.fields().union(&y.fields()).copied().collect();
            segs.push(PathSeg::alt(fs).ok()?);
        } else {
            return None;
        }
    }
    Path::new(segs).ok()
}

fn join_map(a: &FieldMap, b: &FieldMap) -> FieldMap {
    let mut cands: Vec<(FieldKey, Target)> = Vec::new();
    for (ka, ta) in a.entries() {
        match ta {
            Target::Var(v) => {
                if let [kb] = b.keys_targeting(v).as_slice() {
                    let fs: BTreeSet<String> = ka.fields().union(&kb.fields()).map(|s| s.to_string()).collect();
                    cands.push((FieldKey::of(fs), ta.clone()));
                }
            }
            Target::Null => {
                if b.get_key(ka) == Some(&Target::Null) {
                    cands.push((ka.clone(), Target::Null));
                }
            }
        }
    }
    let mut out = FieldMap::new();
    for (i, (k, t)) in cands.iter().enumerate() {
        let clash = cands
            .iter()
            .enumerate()
            .any(|(j, (k2, _))| i != j && !k.fields().is_disjoint(&k2.fields()));
        if !clash {
            out.insert_key(k.clone(), t.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(s: &str) -> TypeEnv {
        s.parse().unwrap()
    }

    const LIST: &str = "Next: rcu, data: normal";
    const TREE: &str = "Left: rcu, Right: rcu, data: normal";

    fn block(fields: &str, src: &str) -> Program {
        crate::parse(&format!("fields {{ {fields} }} root head; writer w {{ rcu_write {{ {src} }} }}")).unwrap()
    }

    fn fields(f: &str) -> FieldTypeTable {
        block(f, "skip;").field_types
    }

    fn stmt(src: &str) -> Stmt {
        block("Next: rcu, Left: rcu, Right: rcu, data: normal", src).threads[0].blocks[0].body.clone()
    }

    #[test]
    fn root_read() {
        let ft = fields(LIST);
        let mut ck = Checker::new(&ft, CheckOptions::default());
        let out = ck.check_atomic(&env("head: rcuRoot, par: undef"), &stmt("par = head;"), CheckMode::Write).unwrap();
        assert_eq!(out, env("head: rcuRoot, par: rcuItr eps {}"));
    }

    #[test]
    fn unlink_in_bag_remove() {
        let ft = fields(LIST);
        let mut ck = Checker::new(&ft, CheckOptions::default());
        let before = env(
            "par: rcuItr Next^k {Next -> cur}, cur: rcuItr Next^k.Next {Next -> curl}, curl: rcuItr Next^k.Next.Next {}",
        );
        let out = ck.check_atomic(&before, &stmt("par.Next = curl;"), CheckMode::Write).unwrap();
        assert_eq!(
            out,
            env("par: rcuItr Next^k {Next -> curl}, cur: unlinked, curl: rcuItr Next^k.Next {}")
        );
    }

    #[test]
    fn unlink_needs_null_siblings() {
        let ft = fields(TREE);
        let mut ck = Checker::new(&ft, CheckOptions::default());
        let before = env("p: rcuItr eps {Left -> c}, c: rcuItr Left {Left -> l}, l: rcuItr Left.Left {}");
        let d = ck.check_atomic(&before, &stmt("p.Left = l;"), CheckMode::Write).unwrap_err();
        assert_eq!(d.rule, "T-UnlinkH");
        assert!(d.message.contains("Right"), "{}", d.message);
    }

    #[test]
    fn unlink_framing() {
        let ft = fields(LIST);
        let mut ck = Checker::new(&ft, CheckOptions::default());
        let before = env(
            "x: rcuItr eps {Next -> z}, z: rcuItr Next {Next -> r}, r: rcuItr Next.Next {}, m: rcuItr Next {}",
        );
        let d = ck.check_atomic(&before, &stmt("x.Next = r;"), CheckMode::Write).unwrap_err();
        assert_eq!(d.rule, "T-UnlinkH");
        assert!(d.message.contains("`m`"), "{}", d.message);
    }

    #[test]
    fn sync_then_free() {
        let ft = fields(LIST);
        let mut ck = Checker::new(&ft, CheckOptions::default());
        let out = ck.check_stmt(&env("z: unlinked"), &stmt("sync_start; sync_stop;"), CheckMode::Write).unwrap();
        assert_eq!(out, env("z: freeable"));
        let out = ck.check_stmt(&out, &stmt("free(z);"), CheckMode::Write).unwrap();
        assert_eq!(out, env("z: undef"));
    }

    #[test]
    fn join_widens_to_alt() {
        let a = env("par: rcuItr Left {Left -> cur}, cur: rcuItr Left.Left {}");
        let b = env("par: rcuItr Right {Right -> cur}, cur: rcuItr Right.Right {}");
        assert_eq!(
            join_env(&a, &b).unwrap(),
            env("par: rcuItr (Left|Right) {Left|Right -> cur}, cur: rcuItr (Left|Right).(Left|Right) {}")
        );
        assert!(join_env(&env("x: unlinked"), &env("x: undef")).is_err());
    }

    #[test]
    fn skip_branches_keep_env() {
        let ft = fields(LIST);
        let mut ck = Checker::new(&ft, CheckOptions::default());
        let e = env("b: bool, x: rcuItr Next {}");
        let s = Stmt::IfBool { b: "b".into(), then: Box::new(Stmt::skip()), els: Box::new(Stmt::skip()), span: Span::default() };
        assert_eq!(ck.check_stmt(&e, &s, CheckMode::Write).unwrap(), e);
    }
}
