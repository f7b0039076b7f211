//! Abstract heap paths and field maps.
//!
//! A [`Path`] describes how a node may be reached from the root: a sequence
//! of concrete fields, alternations `(l|r)`, and indexed repetitions
//! `(l|r)^k`. Index variables denote naturals and are shared across every
//! path of one type environment. A [`FieldMap`] records which local
//! variables (or `null`) sit behind which fields of a node.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Field = String;

/// Default enumeration bound for [`may_alias`].
pub const DEFAULT_ALIAS_BOUND: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("no assignment for index variable `{0}`")]
    MissingIndex(IndexVar),
    #[error("malformed path `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("invalid path: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexVar(pub String);

impl IndexVar {
    pub fn new(name: impl Into<String>) -> Self {
        IndexVar(name.into())
    }
}

impl fmt::Display for IndexVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathSeg {
    Concrete(Field),
    /// Exactly one of at least two fields.
    Alt(BTreeSet<Field>),
    /// `index` repetitions, each an independent choice among the fields.
    Rep(BTreeSet<Field>, IndexVar),
}

impl PathSeg {
    pub fn field(f: impl Into<Field>) -> Self {
        PathSeg::Concrete(f.into())
    }

    /// Alternation over `fields`; a singleton collapses to a concrete field.
    pub fn alt<I, S>(fields: I) -> Result<Self, PathError>
    where
        I: IntoIterator<Item = S>,
        S: Into<Field>,
    {
        let set: BTreeSet<Field> = fields.into_iter().map(Into::into).collect();
        match set.len() {
            0 => Err(PathError::Invalid("empty alternation".into())),
            1 => Ok(PathSeg::Concrete(set.into_iter().next().unwrap())),
            _ => Ok(PathSeg::Alt(set)),
        }
    }

    pub fn rep<I, S>(fields: I, k: IndexVar) -> Result<Self, PathError>
    where
        I: IntoIterator<Item = S>,
        S: Into<Field>,
    {
        let set: BTreeSet<Field> = fields.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(PathError::Invalid("empty repetition".into()));
        }
        Ok(PathSeg::Rep(set, k))
    }

    /// The letters this segment may contribute.
    pub fn fields(&self) -> BTreeSet<&str> {
        match self {
            PathSeg::Concrete(f) => std::iter::once(f.as_str()).collect(),
            PathSeg::Alt(fs) | PathSeg::Rep(fs, _) => fs.iter().map(String::as_str).collect(),
        }
    }

    /// Concrete and Alt segments always contribute exactly one letter.
    pub fn is_unit(&self) -> bool {
        !matches!(self, PathSeg::Rep(..))
    }

    pub fn index(&self) -> Option<&IndexVar> {
        match self {
            PathSeg::Rep(_, k) => Some(k),
            _ => None,
        }
    }
}

fn write_fields(f: &mut fmt::Formatter<'_>, fs: &BTreeSet<Field>) -> fmt::Result {
    let joined: Vec<&str> = fs.iter().map(String::as_str).collect();
    write!(f, "({})", joined.join("|"))
}

impl fmt::Display for PathSeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathSeg::Concrete(x) => f.write_str(x),
            PathSeg::Alt(fs) => write_fields(f, fs),
            PathSeg::Rep(fs, k) if fs.len() == 1 => {
                write!(f, "{}^{}", fs.iter().next().unwrap(), k)
            }
            PathSeg::Rep(fs, k) => {
                write_fields(f, fs)?;
                write!(f, "^{k}")
            }
        }
    }
}

/// Affine expression `constant + Σ coeff·var` over naturals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Affine {
    pub constant: i64,
    pub coeffs: BTreeMap<IndexVar, i64>,
}

impl Affine {
    pub fn sub(&self, other: &Affine) -> Affine {
        let mut out = self.clone();
        out.constant -= other.constant;
        for (k, c) in &other.coeffs {
            *out.coeffs.entry(k.clone()).or_insert(0) -= c;
        }
        out.coeffs.retain(|_, c| *c != 0);
        out
    }

    pub fn offset(mut self, by: i64) -> Affine {
        self.constant += by;
        self
    }

    /// Does some assignment of naturals make the expression zero?
    pub fn can_be_zero(&self) -> bool {
        let cs: Vec<i64> = self.coeffs.values().copied().filter(|c| *c != 0).collect();
        let c = self.constant;
        if cs.is_empty() {
            return c == 0;
        }
        let pos = cs.iter().all(|x| *x > 0);
        let neg = cs.iter().all(|x| *x < 0);
        if pos || neg {
            // Need Σ |a_i| x_i = target with target ≥ 0.
            let target = if pos { -c } else { c };
            if target < 0 {
                return false;
            }
            let coins: Vec<usize> = cs.iter().map(|x| x.unsigned_abs() as usize).collect();
            let target = target as usize;
            let mut reach = vec![false; target + 1];
            reach[0] = true;
            for v in 1..=target {
                reach[v] = coins.iter().any(|&a| a <= v && reach[v - a]);
            }
            return reach[target];
        }
        // Mixed signs: any multiple of the gcd is reachable with naturals.
        let g = cs.iter().fold(0i64, |g, x| gcd(g, x.abs()));
        c % g == 0
    }

    /// Does some assignment of naturals make the expression ≥ 0?
    pub fn can_be_nonneg(&self) -> bool {
        self.constant >= 0 || self.coeffs.values().any(|c| *c > 0)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// ρ — a root-to-node path. The empty sequence is ε.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Path {
    segs: Vec<PathSeg>,
}

impl Path {
    pub fn eps() -> Self {
        Path { segs: Vec::new() }
    }

    /// Builds a path, rejecting an index variable used by more than one
    /// repetition.
    pub fn new(segs: Vec<PathSeg>) -> Result<Self, PathError> {
        let mut seen = BTreeSet::new();
        for s in &segs {
            if let PathSeg::Alt(fs) = s {
                if fs.len() < 2 {
                    return Err(PathError::Invalid(format!("alternation `{s}` needs two fields")));
                }
            }
            if let Some(k) = s.index() {
                if !seen.insert(k.clone()) {
                    return Err(PathError::Invalid(format!(
                        "index variable `{k}` repeated within one path"
                    )));
                }
            }
        }
        Ok(Path { segs })
    }

    pub fn segs(&self) -> &[PathSeg] {
        &self.segs
    }

    pub fn is_eps(&self) -> bool {
        self.segs.is_empty()
    }

    /// ρ.f
    pub fn child(&self, f: &str) -> Path {
        let mut segs = self.segs.clone();
        segs.push(PathSeg::Concrete(f.to_string()));
        Path { segs }
    }

    pub fn index_vars(&self) -> BTreeSet<IndexVar> {
        self.segs.iter().filter_map(|s| s.index().cloned()).collect()
    }

    /// Concrete length as an affine function of the index variables.
    pub fn length(&self) -> Affine {
        let mut a = Affine::default();
        for s in &self.segs {
            match s {
                PathSeg::Rep(_, k) => *a.coeffs.entry(k.clone()).or_insert(0) += 1,
                _ => a.constant += 1,
            }
        }
        a
    }

    /// The path with index `k` instantiated to zero.
    pub fn with_zero(&self, k: &IndexVar) -> Path {
        Path {
            segs: self.segs.iter().filter(|s| s.index() != Some(k)).cloned().collect(),
        }
    }

    /// Replaces the segment at `i` (used by branch refinement).
    pub(crate) fn with_seg(&self, i: usize, seg: PathSeg) -> Path {
        let mut segs = self.segs.clone();
        segs[i] = seg;
        Path { segs }
    }

    pub fn starts_with(&self, prefix: &Path) -> bool {
        self.segs.starts_with(&prefix.segs)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segs.is_empty() {
            return f.write_str("eps");
        }
        for (i, s) in self.segs.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits `text` on `sep` at parenthesis depth zero.
fn split_top(text: &str, sep: char) -> Option<Vec<&str>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            c if c == sep && depth == 0 => {
                out.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    out.push(&text[start..]);
    Some(out)
}

/// Parses `f`, `f|g`, or `(f|g)` into a field set.
pub(crate) fn parse_field_set(text: &str) -> Option<BTreeSet<Field>> {
    let t = text.trim();
    let t = t
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .unwrap_or(t);
    let mut set = BTreeSet::new();
    for part in t.split('|') {
        let p = part.trim();
        if !is_ident(p) {
            return None;
        }
        set.insert(p.to_string());
    }
    Some(set)
}

impl From<Path> for String {
    fn from(p: Path) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Path {
    type Error = PathError;

    fn try_from(s: String) -> Result<Path, PathError> {
        s.parse()
    }
}

impl FromStr for Path {
    type Err = PathError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| PathError::Parse { text: text.to_string(), reason: reason.into() };
        let t = text.trim();
        if t.is_empty() || t == "eps" || t == "ε" {
            return Ok(Path::eps());
        }
        let parts = split_top(t, '.').ok_or_else(|| err("unbalanced parentheses"))?;
        let mut segs = Vec::new();
        for part in parts {
            let part = part.trim();
            if part.is_empty() {
                return Err(err("empty segment"));
            }
            // A trailing `^k` outside parentheses marks a repetition.
            let (body, idx) = match part.rfind('^') {
                Some(i) if !part[i..].contains(')') => (&part[..i], Some(part[i + 1..].trim())),
                _ => (part, None),
            };
            let fields = parse_field_set(body).ok_or_else(|| err("bad field set"))?;
            let seg = match idx {
                Some(k) if is_ident(k) => PathSeg::Rep(fields, IndexVar::new(k)),
                Some(_) => return Err(err("bad index variable")),
                None => PathSeg::alt(fields).map_err(|e| err(&e.to_string()))?,
            };
            segs.push(seg);
        }
        Path::new(segs).map_err(|e| err(&e.to_string()))
    }
}

/// Result of expanding a path under one index assignment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Concretization {
    pub seqs: BTreeSet<Vec<Field>>,
    /// Some sequences exceeded `depth` and were dropped.
    pub overflow: bool,
}

/// All concrete field sequences `path` denotes under `assignment`, up to
/// length `depth`.
pub fn concretize(
    path: &Path,
    assignment: &BTreeMap<IndexVar, usize>,
    depth: usize,
) -> Result<Concretization, PathError> {
    let mut acc: BTreeSet<Vec<Field>> = std::iter::once(Vec::new()).collect();
    let mut overflow = false;
    for seg in &path.segs {
        let (fields, times) = match seg {
            PathSeg::Concrete(f) => (vec![f.clone()], 1),
            PathSeg::Alt(fs) => (fs.iter().cloned().collect(), 1),
            PathSeg::Rep(fs, k) => {
                let n = *assignment.get(k).ok_or_else(|| PathError::MissingIndex(k.clone()))?;
                (fs.iter().cloned().collect::<Vec<_>>(), n)
            }
        };
        for _ in 0..times {
            let mut next = BTreeSet::new();
            for prefix in &acc {
                if prefix.len() + 1 > depth {
                    overflow = true;
                    continue;
                }
                for f in &fields {
                    let mut s = prefix.clone();
                    s.push(f.clone());
                    next.insert(s);
                }
            }
            acc = next;
        }
    }
    Ok(Concretization { seqs: acc, overflow })
}

/// Every assignment of `vars` to `0..=bound`.
fn assignments(vars: &BTreeSet<IndexVar>, bound: usize) -> Vec<BTreeMap<IndexVar, usize>> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        let mut next = Vec::with_capacity(out.len() * (bound + 1));
        for a in &out {
            for n in 0..=bound {
                let mut b = a.clone();
                b.insert(v.clone(), n);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

fn expand(p: &Path, a: &BTreeMap<IndexVar, usize>) -> BTreeSet<Vec<Field>> {
    concretize(p, a, usize::MAX).map(|c| c.seqs).unwrap_or_default()
}

/// Over-approximated set of possible first letters, and whether the
/// sequence may be empty.
fn first_letters(segs: &[PathSeg]) -> (BTreeSet<&str>, bool) {
    let mut out = BTreeSet::new();
    for s in segs {
        out.extend(s.fields());
        if s.is_unit() {
            return (out, false);
        }
    }
    (out, true)
}

fn disjoint(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> bool {
    a.intersection(b).next().is_none()
}

/// Length of the pairwise-aligned prefix of `a` and `b`, or `None` when the
/// alignment exposes a position whose letters can never agree.
fn align<'a, I>(pairs: I) -> Option<usize>
where
    I: Iterator<Item = (&'a PathSeg, &'a PathSeg)>,
{
    let mut n = 0;
    for (x, y) in pairs {
        match (x, y) {
            (x, y) if x.is_unit() && y.is_unit() => {
                if disjoint(&x.fields(), &y.fields()) {
                    return None;
                }
            }
            (PathSeg::Rep(_, k1), PathSeg::Rep(_, k2)) if k1 == k2 => {}
            _ => break,
        }
        n += 1;
    }
    Some(n)
}

/// Structural argument that `a` and `b` never denote the same sequence.
fn provably_disjoint(a: &Path, b: &Path) -> bool {
    if !a.length().sub(&b.length()).can_be_zero() {
        return true;
    }
    let (sa, sb) = (&a.segs[..], &b.segs[..]);
    let Some(i) = align(sa.iter().zip(sb.iter())) else {
        return true;
    };
    let (fa, na) = first_letters(&sa[i..]);
    let (fb, nb) = first_letters(&sb[i..]);
    if !na && !nb && disjoint(&fa, &fb) {
        return true;
    }
    let Some(j) = align(sa.iter().rev().zip(sb.iter().rev())) else {
        return true;
    };
    let ra: Vec<PathSeg> = sa[..sa.len() - j].iter().rev().cloned().collect();
    let rb: Vec<PathSeg> = sb[..sb.len() - j].iter().rev().cloned().collect();
    let (la, na) = first_letters(&ra);
    let (lb, nb) = first_letters(&rb);
    !na && !nb && disjoint(&la, &lb)
}

/// MayAlias(a, b): false only when `a` and `b` can never reach the same
/// node. Enumerates index values up to `bound`, then falls back on length
/// and letter arguments for larger values.
pub fn may_alias(a: &Path, b: &Path, bound: usize) -> bool {
    if a == b {
        return true;
    }
    let vars: BTreeSet<IndexVar> = a.index_vars().union(&b.index_vars()).cloned().collect();
    for asg in assignments(&vars, bound) {
        let ea = expand(a, &asg);
        let eb = expand(b, &asg);
        if ea.intersection(&eb).next().is_some() {
            return true;
        }
    }
    !provably_disjoint(a, b)
}

/// MayAlias against a set of paths.
pub fn may_alias_any<'a>(a: &Path, others: impl IntoIterator<Item = &'a Path>, bound: usize) -> bool {
    others.into_iter().any(|b| may_alias(a, b, bound))
}

/// ∃ρ4 ≠ ε. MayAlias(a, p.ρ4): could `a` name a strict descendant of `p`?
pub fn may_be_strict_descendant(a: &Path, p: &Path, bound: usize) -> bool {
    let vars: BTreeSet<IndexVar> = a.index_vars().union(&p.index_vars()).cloned().collect();
    for asg in assignments(&vars, bound) {
        let ea = expand(a, &asg);
        let ep = expand(p, &asg);
        if ea.iter().any(|x| ep.iter().any(|y| x.len() > y.len() && x.starts_with(y))) {
            return true;
        }
    }
    // Need len(a) ≥ len(p) + 1 for some assignment.
    if !a.length().sub(&p.length()).offset(-1).can_be_nonneg() {
        return false;
    }
    let (sa, sp) = (&a.segs[..], &p.segs[..]);
    let Some(i) = align(sa.iter().zip(sp.iter())) else {
        return false;
    };
    if i < sp.len() {
        let (fa, na) = first_letters(&sa[i..]);
        let (fp, np) = first_letters(&sp[i..]);
        if !na && !np && disjoint(&fa, &fp) {
            return false;
        }
    }
    true
}

/// ρ ≺: ρ′ — `b` widens zero or more unit segments of `a`.
pub fn path_subtype(a: &Path, b: &Path) -> bool {
    a.segs.len() == b.segs.len()
        && a.segs.iter().zip(&b.segs).all(|(x, y)| match (x, y) {
            (PathSeg::Rep(..), _) | (_, PathSeg::Rep(..)) => x == y,
            (PathSeg::Concrete(_) | PathSeg::Alt(_), PathSeg::Concrete(g)) => {
                x == &PathSeg::Concrete(g.clone())
            }
            (_, PathSeg::Alt(gs)) => x.fields().iter().all(|f| gs.contains(*f)),
        })
}

/// Γ[ρ.f^k / ρ.f^k.f]: contracts a repetition over `k` with the unit
/// segment right after it when that segment's letters are exactly `fields`
/// and drawn from the repetition's set.
pub fn reindex_path(p: &Path, k: &IndexVar, fields: &BTreeSet<Field>) -> Path {
    let mut segs = Vec::with_capacity(p.segs.len());
    let mut i = 0;
    while i < p.segs.len() {
        let s = &p.segs[i];
        segs.push(s.clone());
        if let PathSeg::Rep(rep, idx) = s {
            if idx == k {
                if let Some(next) = p.segs.get(i + 1) {
                    let nf: BTreeSet<&str> = next.fields();
                    let want: BTreeSet<&str> = fields.iter().map(String::as_str).collect();
                    if next.is_unit() && nf == want && want.iter().all(|f| rep.contains(*f)) {
                        i += 1;
                    }
                }
            }
        }
        i += 1;
    }
    Path { segs }
}

/// Field-map key: a single field or an alternation of fields.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldKey {
    One(Field),
    Alt(BTreeSet<Field>),
}

impl FieldKey {
    pub fn of(fields: BTreeSet<Field>) -> FieldKey {
        if fields.len() == 1 {
            FieldKey::One(fields.into_iter().next().unwrap())
        } else {
            FieldKey::Alt(fields)
        }
    }

    pub fn fields(&self) -> BTreeSet<&str> {
        match self {
            FieldKey::One(f) => std::iter::once(f.as_str()).collect(),
            FieldKey::Alt(fs) => fs.iter().map(String::as_str).collect(),
        }
    }

    pub fn contains(&self, f: &str) -> bool {
        match self {
            FieldKey::One(g) => g == f,
            FieldKey::Alt(fs) => fs.contains(f),
        }
    }

    /// The path segment this key stands for.
    pub fn as_seg(&self) -> PathSeg {
        match self {
            FieldKey::One(f) => PathSeg::Concrete(f.clone()),
            FieldKey::Alt(fs) => PathSeg::Alt(fs.clone()),
        }
    }
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKey::One(x) => f.write_str(x),
            FieldKey::Alt(fs) => {
                let v: Vec<&str> = fs.iter().map(String::as_str).collect();
                f.write_str(&v.join("|"))
            }
        }
    }
}

/// Serialized as the variable name or `"null"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Target {
    Var(String),
    Null,
}

impl Target {
    pub fn var(&self) -> Option<&str> {
        match self {
            Target::Var(v) => Some(v),
            Target::Null => None,
        }
    }
}

impl From<Target> for String {
    fn from(t: Target) -> String {
        t.to_string()
    }
}

impl From<String> for Target {
    fn from(s: String) -> Target {
        if s == "null" {
            Target::Null
        } else {
            Target::Var(s)
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Var(v) => f.write_str(v),
            Target::Null => f.write_str("null"),
        }
    }
}

/// N — field map of an rcuItr or rcuFresh reference. Serialized as an
/// object keyed by `f` or `f1|f2`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, Target>", try_from = "BTreeMap<String, Target>")]
pub struct FieldMap {
    entries: BTreeMap<FieldKey, Target>,
}

impl FieldMap {
    pub fn new() -> Self {
        FieldMap::default()
    }

    /// Builds a map, rejecting keys that overlap as field sets.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (FieldKey, Target)>,
    ) -> Result<Self, PathError> {
        let mut m = FieldMap::new();
        for (k, t) in entries {
            if let Some(f) = k.fields().into_iter().find(|f| m.key_containing(f).is_some()) {
                return Err(PathError::Invalid(format!("field `{f}` appears in two keys")));
            }
            m.entries.insert(k, t);
        }
        Ok(m)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&FieldKey, &Target)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// N(f) for a single-field key.
    pub fn get(&self, f: &str) -> Option<&Target> {
        self.entries.get(&FieldKey::One(f.to_string()))
    }

    pub fn get_key(&self, k: &FieldKey) -> Option<&Target> {
        self.entries.get(k)
    }

    pub fn key_containing(&self, f: &str) -> Option<(&FieldKey, &Target)> {
        self.entries.iter().find(|(k, _)| k.contains(f))
    }

    /// N([f ⇀ t]): drops whatever key covered `f`, then binds `f` alone.
    pub fn set(&mut self, f: &str, t: Target) {
        self.entries.retain(|k, _| !k.contains(f));
        self.entries.insert(FieldKey::One(f.to_string()), t);
    }

    pub fn insert_key(&mut self, k: FieldKey, t: Target) {
        let fs: Vec<String> = k.fields().into_iter().map(str::to_string).collect();
        self.entries.retain(|old, _| !fs.iter().any(|f| old.contains(f)));
        self.entries.insert(k, t);
    }

    pub fn remove_key(&mut self, k: &FieldKey) -> Option<Target> {
        self.entries.remove(k)
    }

    /// Does any entry name `var`?
    pub fn mentions(&self, var: &str) -> bool {
        self.entries.values().any(|t| t.var() == Some(var))
    }

    pub fn keys_targeting(&self, var: &str) -> Vec<&FieldKey> {
        self.entries.iter().filter(|(_, t)| t.var() == Some(var)).map(|(k, _)| k).collect()
    }

    pub fn vars(&self) -> BTreeSet<&str> {
        self.entries.values().filter_map(Target::var).collect()
    }
}

impl fmt::Display for FieldMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return f.write_str("{}");
        }
        f.write_str("{")?;
        for (i, (k, t)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, " {k} -> {t}")?;
        }
        f.write_str(" }")
    }
}

impl From<FieldMap> for BTreeMap<String, Target> {
    fn from(m: FieldMap) -> Self {
        m.entries.into_iter().map(|(k, t)| (k.to_string(), t)).collect()
    }
}

impl TryFrom<BTreeMap<String, Target>> for FieldMap {
    type Error = PathError;

    fn try_from(m: BTreeMap<String, Target>) -> Result<Self, PathError> {
        FieldMap::from_entries(m.into_iter().map(|(k, t)| (FieldKey::of(k.split('|').map(String::from).collect()), t)))
    }
}

/// N ≺: N′ — every entry of `b` is some entry of `a` with its key widened.
/// Entries of `a` may be dropped; an empty map sits at the top.
pub fn fieldmap_subtype(a: &FieldMap, b: &FieldMap) -> bool {
    b.entries.iter().all(|(kb, tb)| {
        let fb = kb.fields();
        a.entries
            .iter()
            .any(|(ka, ta)| ta == tb && ka.fields().iter().all(|f| fb.contains(f)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Path {
        s.parse().unwrap()
    }

    fn k(n: &str) -> IndexVar {
        IndexVar::new(n)
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(p("eps"), Path::eps());
        assert_eq!(p("Next^k.Next").to_string(), "Next^k.Next");
        assert_eq!(p("(Next)^k").to_string(), "Next^k");
        assert_eq!(p("Left|Right.(Left|Right)").to_string(), "(Left|Right).(Left|Right)");
        assert_eq!(p("(l|r)^k.l").segs().len(), 2);
        assert!("Next^k.Next^k".parse::<Path>().is_err());
        assert!("(l|r".parse::<Path>().is_err());
    }

    #[test]
    fn concretize_examples() {
        let none = BTreeMap::new();
        let c = concretize(&Path::eps(), &none, 8).unwrap();
        assert_eq!(c.seqs, [vec![]].into_iter().collect());

        let two: BTreeMap<_, _> = [(k("k"), 2)].into_iter().collect();
        let c = concretize(&p("Next^k"), &two, 8).unwrap();
        assert_eq!(c.seqs.len(), 1);
        assert_eq!(c.seqs.iter().next().unwrap(), &vec!["Next".to_string(); 2]);

        let one: BTreeMap<_, _> = [(k("k"), 1)].into_iter().collect();
        let c = concretize(&p("(l|r)^k.l"), &one, 8).unwrap();
        let want: BTreeSet<Vec<Field>> =
            [vec!["l".into(), "l".into()], vec!["r".into(), "l".into()]].into_iter().collect();
        assert_eq!(c.seqs, want);

        assert_eq!(
            concretize(&p("Next^k"), &none, 8),
            Err(PathError::MissingIndex(k("k")))
        );
        let c = concretize(&p("Next^k"), &[(k("k"), 5)].into_iter().collect(), 3).unwrap();
        assert!(c.overflow && c.seqs.is_empty());
    }

    #[test]
    fn may_alias_examples() {
        assert!(may_alias(&p("Next^k.Next"), &p("Next^k.Next"), 3));
        assert!(!may_alias(&p("Next^k"), &p("Next^k.Next"), 3));
        assert!(may_alias(&p("(l|r)^k"), &p("(l|r)^m.l"), 3));
        assert!(!may_alias(&p("(l|r)^k.l"), &p("(l|r)^k.r"), 3));
        assert!(!may_alias(&p("(l|r)^k.(l|r).l"), &p("(l|r)^k.(l|r).r.l^m"), 3));
    }

    #[test]
    fn descendant_examples() {
        assert!(may_be_strict_descendant(&p("Next^k.Next.Next"), &p("Next^k"), 3));
        assert!(!may_be_strict_descendant(&p("Next^k"), &p("Next^k.Next"), 3));
        assert!(!may_be_strict_descendant(&p("(l|r)^k"), &p("(l|r)^k.r.l^m.l.r"), 3));
        assert!(!may_be_strict_descendant(&p("(l|r)^k.(l|r).l"), &p("(l|r)^k.(l|r).r"), 3));
    }

    #[test]
    fn affine_zero() {
        let a = p("Next^k").length().sub(&p("Next^k.Next").length());
        assert!(!a.can_be_zero());
        let b = p("(l|r)^k").length().sub(&p("(l|r)^m.l").length());
        assert!(b.can_be_zero());
        let c = Affine { constant: 3, coeffs: [(k("a"), -2)].into_iter().collect() };
        assert!(!c.can_be_zero());
    }

    #[test]
    fn subtype_examples() {
        assert!(path_subtype(&p("Next"), &p("Next")));
        assert!(path_subtype(&p("Next^k.l"), &p("Next^k.(l|r)")));
        assert!(!path_subtype(&p("Next^k.(l|r)"), &p("Next^k.l")));

        let cur = Target::Var("cur".into());
        let one = |f: &str, t: Target| {
            FieldMap::from_entries([(FieldKey::One(f.into()), t)]).unwrap()
        };
        let lr: BTreeSet<Field> = ["l".to_string(), "r".to_string()].into_iter().collect();
        let alt = FieldMap::from_entries([(FieldKey::Alt(lr), cur.clone())]).unwrap();
        assert!(fieldmap_subtype(&one("Next", cur.clone()), &one("Next", cur.clone())));
        assert!(fieldmap_subtype(&one("l", cur.clone()), &alt));
        assert!(!fieldmap_subtype(&alt, &one("l", cur.clone())));
        let mut both = one("l", cur.clone());
        both.set("r", Target::Null);
        assert!(fieldmap_subtype(&both, &one("l", cur.clone())));
        assert!(!fieldmap_subtype(&FieldMap::new(), &one("l", cur)));
    }

    #[test]
    fn reindex_examples() {
        let next: BTreeSet<Field> = ["Next".to_string()].into_iter().collect();
        let lr: BTreeSet<Field> = ["l".to_string(), "r".to_string()].into_iter().collect();
        assert_eq!(reindex_path(&p("Next^k.Next"), &k("k"), &next), p("Next^k"));
        assert_eq!(reindex_path(&Path::eps(), &k("k"), &next), Path::eps());
        assert_eq!(reindex_path(&p("(l|r)^k.(l|r).r"), &k("k"), &lr), p("(l|r)^k.r"));
        let l: BTreeSet<Field> = ["l".to_string()].into_iter().collect();
        assert_eq!(
            reindex_path(&p("(l|r)^k.(l|r).r.l^m.l"), &k("m"), &l),
            p("(l|r)^k.(l|r).r.l^m")
        );
    }

    #[test]
    fn fieldmap_keys_disjoint() {
        let lr: BTreeSet<Field> = ["l".to_string(), "r".to_string()].into_iter().collect();
        let bad = FieldMap::from_entries([
            (FieldKey::Alt(lr), Target::Null),
            (FieldKey::One("l".into()), Target::Null),
        ]);
        assert!(bad.is_err());
    }
}
