//! Transfer functions for atomic statements.

use crate::lang::Stmt;
use crate::paths::{may_alias, may_be_strict_descendant, FieldKey, FieldMap, Path, Target};
use crate::typesys::{RcuType, TypeEnv};

use super::{CheckMode, Checker, Fail};

fn fail(rule: &'static str, msg: impl Into<String>) -> Fail {
    Fail { rule, message: msg.into() }
}

fn describe(env: &TypeEnv, x: &str) -> String {
    match env.get(x) {
        Some(t) => format!("`{x}: {t}`"),
        None => format!("`{x}` (unbound)"),
    }
}

/// Is `z` named in the field map of any binding other than those in
/// `except`?
fn mentioned_by_others(env: &TypeEnv, z: &str, except: &[&str]) -> Option<String> {
    env.iter()
        .filter(|(x, _)| !except.contains(&x.as_str()))
        .find(|(_, t)| t.fmap().is_some_and(|n| n.mentions(z)))
        .map(|(x, _)| x.clone())
}

impl Checker<'_> {
    pub(super) fn atomic(&mut self, env: &TypeEnv, s: &Stmt, mode: CheckMode) -> Result<TypeEnv, Fail> {
        if mode == CheckMode::Read {
            return self.atomic_read(env, s);
        }
        let mut out = env.clone();
        match s {
            Stmt::Skip { .. } | Stmt::DataSet { .. } => {}
            Stmt::Assert { label, .. } => {
                self.sites.insert(label.clone(), env.clone());
            }
            Stmt::BoolAssign { b, .. } => {
                if env.get(b) != Some(&RcuType::Bool) {
                    return Err(fail("artifact", format!("{} is not a boolean", describe(env, b))));
                }
            }
            Stmt::RootRead { y, root, .. } => {
                self.rule("T-Root", s);
                if env.get(root) != Some(&RcuType::RcuRoot) {
                    return Err(fail("T-Root", format!("{root} is not the rcuRoot")));
                }
                self.overwritable(env, y, "T-Root")?;
                out.insert(y.clone(), RcuType::itr(Path::eps()));
            }
            Stmt::VarRead { z, x, .. } => {
                self.rule("T-ReadS", s);
                let (p, n) = match env.get(x) {
                    Some(RcuType::RcuItr(p, n)) => (p.clone(), n.clone()),
                    Some(RcuType::RcuFresh(_)) => {
                        return Err(fail("T-ReadS", format!("cannot alias fresh `{x}` before it is published")))
                    }
                    _ => return Err(fail("T-ReadS", format!("{} is not an rcuItr", describe(env, x)))),
                };
                if z != x {
                    self.overwritable(env, z, "T-ReadS")?;
                }
                out.insert(z.clone(), RcuType::RcuItr(p, n));
            }
            Stmt::FieldRead { z, x, f, .. } => {
                self.rule("T-ReadH", s);
                let (p, mut n) = match env.get(x) {
                    Some(RcuType::RcuItr(p, n)) => (p.clone(), n.clone()),
                    _ => return Err(fail("T-ReadH", format!("{} is not an rcuItr", describe(env, x)))),
                };
                if z == x {
                    return Err(fail("T-ReadH", format!("`{z} = {x}.{f}` overwrites its own source")));
                }
                self.overwritable(env, z, "T-ReadH")?;
                if n.entries().any(|(k, t)| !k.contains(f) && t.var() == Some(z)) {
                    return Err(fail("T-ReadH", format!("`{x}` already records `{z}` under another field")));
                }
                n.set(f, Target::Var(z.clone()));
                out.insert(x.clone(), RcuType::RcuItr(p.clone(), n));
                out.insert(z.clone(), RcuType::itr(p.child(f)));
            }
            Stmt::Alloc { x, .. } => {
                self.rule("T-Alloc", s);
                match env.get(x) {
                    Some(RcuType::Undef | RcuType::RcuItr(..)) => {}
                    _ => return Err(fail("T-Alloc", format!("{} cannot receive a new node", describe(env, x)))),
                }
                if let Some(m) = mentioned_by_others(env, x, &[x]) {
                    return Err(fail("T-Alloc", format!("`{m}` still records `{x}` in its field map")));
                }
                out.insert(x.clone(), RcuType::RcuFresh(FieldMap::new()));
            }
            Stmt::Free { x, .. } => {
                self.rule("T-Free", s);
                if env.get(x) != Some(&RcuType::Freeable) {
                    return Err(fail(
                        "T-Free",
                        format!("{} is not freeable; unlink it and wait for a grace period first", describe(env, x)),
                    ));
                }
                out.insert(x.clone(), RcuType::Undef);
            }
            Stmt::SyncStart { .. } | Stmt::SyncStop { .. } => {
                return Err(fail("T-Sync", "sync_start must be immediately followed by sync_stop"));
            }
            Stmt::DataRead { x, v, .. } => {
                if !matches!(env.get(x), Some(RcuType::RcuItr(..) | RcuType::RcuFresh(_))) {
                    return Err(fail("artifact", format!("{} cannot be dereferenced for `{v}`", describe(env, x))));
                }
            }
            Stmt::DataWrite { x, .. } => {
                if !matches!(env.get(x), Some(RcuType::RcuItr(..) | RcuType::RcuFresh(_))) {
                    return Err(fail("artifact", format!("{} cannot be dereferenced", describe(env, x))));
                }
            }
            Stmt::FieldWrite { x, f, rhs, .. } => return self.field_write(env, s, x, f, rhs.as_deref()),
            _ => unreachable!("compound statement reached atomic rules"),
        }
        Ok(out)
    }

    /// The target of an assignment must be coercible to undef and unnamed
    /// by any field map.
    fn overwritable(&self, env: &TypeEnv, y: &str, rule: &'static str) -> Result<(), Fail> {
        match env.get(y) {
            Some(t) if t.droppable() && *t != RcuType::Bool => {}
            _ => return Err(fail(rule, format!("{} cannot be overwritten", describe(env, y)))),
        }
        if let Some(m) = mentioned_by_others(env, y, &[y]) {
            return Err(fail(rule, format!("`{m}` still records `{y}` in its field map")));
        }
        Ok(())
    }

    fn atomic_read(&mut self, env: &TypeEnv, s: &Stmt) -> Result<TypeEnv, Fail> {
        let mut out = env.clone();
        let itr = |x: &str| matches!(env.get(x), Some(RcuType::RcuItrBare));
        match s {
            Stmt::Skip { .. } | Stmt::DataSet { .. } => {}
            Stmt::Assert { label, .. } => {
                self.sites.insert(label.clone(), env.clone());
            }
            Stmt::BoolAssign { b, .. } => {
                if env.get(b) != Some(&RcuType::Bool) {
                    return Err(fail("artifact", format!("{} is not a boolean", describe(env, b))));
                }
            }
            Stmt::RootRead { y, .. } => {
                self.rule("T-Root", s);
                out.insert(y.clone(), RcuType::RcuItrBare);
            }
            Stmt::VarRead { z, x, .. } => {
                self.rule("T-ReadS", s);
                if !itr(x) {
                    return Err(fail("T-ReadS", format!("{} is not an rcuItr", describe(env, x))));
                }
                out.insert(z.clone(), RcuType::RcuItrBare);
            }
            Stmt::FieldRead { z, x, .. } => {
                self.rule("T-ReadH", s);
                if !itr(x) {
                    return Err(fail("T-ReadH", format!("{} is not an rcuItr", describe(env, x))));
                }
                out.insert(z.clone(), RcuType::RcuItrBare);
            }
            Stmt::DataRead { x, .. } => {
                if !itr(x) {
                    return Err(fail("T-ReadH", format!("{} is not an rcuItr", describe(env, x))));
                }
            }
            Stmt::FieldWrite { .. }
            | Stmt::DataWrite { .. }
            | Stmt::Alloc { .. }
            | Stmt::Free { .. }
            | Stmt::SyncStart { .. }
            | Stmt::SyncStop { .. } => {
                return Err(fail("ToRCURead", format!("`{s}` is not allowed in a read-side critical section")));
            }
            _ => unreachable!("compound statement reached atomic rules"),
        }
        Ok(out)
    }

    fn field_write(
        &mut self,
        env: &TypeEnv,
        s: &Stmt,
        x: &str,
        f: &str,
        rhs: Option<&str>,
    ) -> Result<TypeEnv, Fail> {
        let bound = self.opts.alias_bound;
        let mut out = env.clone();
        let rhs_ty = rhs.and_then(|r| env.get(r));

        // Writes into a fresh node.
        if let Some(RcuType::RcuFresh(nf)) = env.get(x) {
            self.rule("T-WriteFH", s);
            let mut nf = nf.clone();
            match rhs {
                None => nf.set(f, Target::Null),
                Some(z) => {
                    if nf.key_containing(f).is_some() {
                        return Err(fail("T-WriteFH", format!("`{x}.{f}` has already been set")));
                    }
                    let Some(RcuType::RcuItr(pz, _)) = env.get(z) else {
                        return Err(fail("T-WriteFH", format!("{} is not an rcuItr", describe(env, z))));
                    };
                    let witnessed = env.iterators().any(|(w, pw, nw)| {
                        w != z && nw.get(f) == Some(&Target::Var(z.to_string())) && pw.child(f) == *pz
                    });
                    if !witnessed {
                        return Err(fail(
                            "T-WriteFH",
                            format!("no iterator records `{z}` as its `{f}` child at path {pz}"),
                        ));
                    }
                    nf.set(f, Target::Var(z.to_string()));
                }
            }
            out.insert(x, RcuType::RcuFresh(nf));
            return Ok(out);
        }

        let guess = if matches!(rhs_ty, Some(RcuType::RcuFresh(_))) { "T-Insert" } else { "T-UnlinkH" };
        let Some(RcuType::RcuItr(rho, n)) = env.get(x) else {
            return Err(fail(guess, format!("{} is neither rcuItr nor rcuFresh", describe(env, x))));
        };
        let Some(r) = rhs else {
            return Err(fail("T-UnlinkH", format!("`{x}.{f} = null` would drop a subtree; unlink through an rcuItr")));
        };
        let entry = n.get(f).cloned();
        if entry.is_none() {
            let why = match n.key_containing(f) {
                Some((k, _)) => format!("`{x}` records `{k}`; test which field first"),
                None => format!("`{x}.{f}` is not known; read it or test it against null first"),
            };
            return Err(fail(guess, why));
        }
        let entry = entry.unwrap();

        match rhs_ty {
            Some(RcuType::RcuFresh(nn)) => {
                let nn = nn.clone();
                match entry {
                    Target::Var(o) => {
                        let Some(RcuType::RcuItr(rho_o, n_o)) = env.get(&o) else {
                            return Err(fail("T-Replace", format!("{} is not an rcuItr", describe(env, &o))));
                        };
                        if rho.child(f) != *rho_o {
                            return Err(fail("T-Replace", format!("path of `{o}` is {rho_o}, expected {}", rho.child(f))));
                        }
                        if *n_o == nn {
                            self.replace(env, s, x, f, &o, r)
                        } else {
                            self.insert(env, s, x, f, &o, r)
                        }
                    }
                    Target::Null => {
                        self.rule("T-LinkF-Null", s);
                        if let Some((k, _)) = nn.entries().find(|(_, t)| **t != Target::Null) {
                            return Err(fail(
                                "T-LinkF-Null",
                                format!("`{x}.{f}` is null but `{r}.{k}` is not"),
                            ));
                        }
                        for (m, pm, nm) in env.iterators() {
                            if m != x && !nm.is_empty() && may_alias(pm, rho, bound) {
                                return Err(fail("T-LinkF-Null", format!("`{m}` may alias `{x}` at {pm}")));
                            }
                        }
                        if let Some(m) = mentioned_by_others(env, r, &[x, r]) {
                            return Err(fail("T-LinkF-Null", format!("`{m}` records fresh `{r}`")));
                        }
                        let mut n = n.clone();
                        n.set(f, Target::Var(r.to_string()));
                        out.insert(x, RcuType::RcuItr(rho.clone(), n));
                        out.insert(r, RcuType::RcuItr(rho.child(f), nn));
                        Ok(out)
                    }
                }
            }
            Some(RcuType::RcuItr(..)) => self.unlink(env, s, x, f, r),
            _ => Err(fail(guess, format!("{} cannot be stored into `{x}.{f}`", describe(env, r)))),
        }
    }

    /// `p.f = n` where `n` is a fresh copy of the current child `o`.
    fn replace(&mut self, env: &TypeEnv, s: &Stmt, p: &str, f: &str, o: &str, n: &str) -> Result<TypeEnv, Fail> {
        self.rule("T-Replace", s);
        let bound = self.opts.alias_bound;
        let Some(RcuType::RcuItr(rho, np)) = env.get(p) else { unreachable!() };
        let Some(RcuType::RcuItr(rho1, _)) = env.get(o) else { unreachable!() };
        let Some(RcuType::RcuFresh(nn)) = env.get(n) else { unreachable!() };
        for (m, pm, nm) in env.iterators() {
            if [p, o, n].contains(&m.as_str()) {
                continue;
            }
            if may_alias(pm, rho, bound) || may_alias(pm, rho1, bound) {
                return Err(fail("T-Replace", format!("`{m}` at {pm} may alias `{p}` or `{o}`")));
            }
            if nm.mentions(o) {
                return Err(fail("T-Replace", format!("`{m}` still records `{o}`")));
            }
        }
        for v in [p, o, n] {
            if let Some(m) = mentioned_by_others(env, v, &[p, o, n]) {
                return Err(fail("T-Replace", format!("`{m}` records `{v}`")));
            }
        }
        let mut out = env.clone();
        let mut np = np.clone();
        np.set(f, Target::Var(n.to_string()));
        out.insert(p, RcuType::RcuItr(rho.clone(), np));
        out.insert(n, RcuType::RcuItr(rho1.clone(), nn.clone()));
        out.insert(o, RcuType::Unlinked);
        Ok(out)
    }

    /// `p.f = n` where fresh `n` points at the current child `o`.
    fn insert(&mut self, env: &TypeEnv, s: &Stmt, p: &str, f: &str, o: &str, n: &str) -> Result<TypeEnv, Fail> {
        self.rule("T-Insert", s);
        let bound = self.opts.alias_bound;
        let Some(RcuType::RcuItr(rho, np)) = env.get(p) else { unreachable!() };
        let Some(RcuType::RcuItr(_, n_o)) = env.get(o) else { unreachable!() };
        let Some(RcuType::RcuFresh(nn)) = env.get(n) else { unreachable!() };
        let links: Vec<(&FieldKey, &Target)> = nn.entries().filter(|(_, t)| **t != Target::Null).collect();
        let f4 = match links.as_slice() {
            [(FieldKey::One(f4), Target::Var(v))] if v == o => f4.clone(),
            _ => {
                return Err(fail(
                    "T-Insert",
                    format!("fresh `{n}` must link exactly one field to `{o}` and set the rest to null"),
                ))
            }
        };
        for v in [p, o, n] {
            if let Some(m) = mentioned_by_others(env, v, &[p, o, n]) {
                return Err(fail("T-Insert", format!("`{m}` records `{v}`")));
            }
        }
        for (m, pm, _) in env.iterators() {
            if [p, o, n].contains(&m.as_str()) {
                continue;
            }
            if may_be_strict_descendant(pm, rho, bound) {
                return Err(fail(
                    "T-Insert",
                    format!("`{m}` at {pm} may lie below {rho}; its path would change"),
                ));
            }
        }
        let mut out = env.clone();
        let mut np = np.clone();
        np.set(f, Target::Var(n.to_string()));
        out.insert(p, RcuType::RcuItr(rho.clone(), np));
        out.insert(n, RcuType::RcuItr(rho.child(f), nn.clone()));
        out.insert(o, RcuType::RcuItr(rho.child(f).child(&f4), n_o.clone()));
        Ok(out)
    }

    /// `x.f1 = r` where `r` is the only child of `x.f1`.
    fn unlink(&mut self, env: &TypeEnv, s: &Stmt, x: &str, f1: &str, r: &str) -> Result<TypeEnv, Fail> {
        self.rule("T-UnlinkH", s);
        let bound = self.opts.alias_bound;
        let Some(RcuType::RcuItr(rho, n)) = env.get(x) else { unreachable!() };
        let z = match n.get(f1) {
            Some(Target::Var(z)) => z.clone(),
            _ => return Err(fail("T-UnlinkH", format!("`{x}.{f1}` is not a known variable"))),
        };
        if z == r {
            return Err(fail("T-UnlinkH", format!("`{x}.{f1}` already holds `{r}`")));
        }
        let Some(RcuType::RcuItr(rho1, n1)) = env.get(&z) else {
            return Err(fail("T-UnlinkH", format!("{} is not an rcuItr", describe(env, &z))));
        };
        if rho.child(f1) != *rho1 {
            return Err(fail("T-UnlinkH", format!("path of `{z}` is {rho1}, expected {}", rho.child(f1))));
        }
        let Some(RcuType::RcuItr(rho2, n2)) = env.get(r) else { unreachable!() };
        let f2 = n1.keys_targeting(r);
        let f2 = match f2.as_slice() {
            [FieldKey::One(f2)] => f2.clone(),
            _ => return Err(fail("T-UnlinkH", format!("`{z}` does not record `{r}` under a single field"))),
        };
        if rho1.child(&f2) != *rho2 {
            return Err(fail("T-UnlinkH", format!("path of `{r}` is {rho2}, expected {}", rho1.child(&f2))));
        }
        for g in self.fields.rcu_fields() {
            if *g != f2 && n1.get(g) != Some(&Target::Null) {
                return Err(fail(
                    "T-UnlinkH",
                    format!("`{z}.{g}` must be known to be null before `{z}` is unlinked"),
                ));
            }
        }
        for (m, pm, nm) in env.iterators() {
            if [x, z.as_str(), r].contains(&m.as_str()) {
                continue;
            }
            for q in [rho, rho1, rho2] {
                if may_alias(pm, q, bound) {
                    return Err(fail("T-UnlinkH", format!("`{m}` at {pm} may alias {q}")));
                }
            }
            if nm.mentions(&z) || nm.mentions(r) {
                return Err(fail("T-UnlinkH", format!("`{m}` records `{z}` or `{r}`")));
            }
            if may_be_strict_descendant(pm, rho2, bound) {
                return Err(fail("T-UnlinkH", format!("`{m}` at {pm} may lie below {rho2}")));
            }
        }
        if let Some(m) = env
            .iter()
            .filter(|(m, _)| ![x, z.as_str(), r].contains(&m.as_str()))
            .find(|(_, t)| matches!(t, RcuType::RcuFresh(nm) if nm.mentions(&z)))
            .map(|(m, _)| m.clone())
        {
            return Err(fail("T-UnlinkH", format!("fresh `{m}` still points at `{z}`")));
        }
        let mut out = env.clone();
        let mut n = n.clone();
        n.set(f1, Target::Var(r.to_string()));
        out.insert(x, RcuType::RcuItr(rho.clone(), n));
        out.insert(r, RcuType::RcuItr(rho1.clone(), n2.clone()));
        out.insert(z, RcuType::Unlinked);
        Ok(out)
    }
}

