//! RCU reference types and type environments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::{
    fieldmap_subtype, parse_field_set, path_subtype, reindex_path, Field, FieldKey, FieldMap,
    IndexVar, Path, Target,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed type `{text}`: {reason}")]
pub struct TypeParseError {
    pub text: String,
    pub reason: String,
}

fn perr(text: &str, reason: impl Into<String>) -> TypeParseError {
    TypeParseError { text: text.to_string(), reason: reason.into() }
}

/// Serialized in its surface syntax, e.g. `"rcuItr Next^k {Next -> cur}"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RcuType {
    /// A reference into the shared structure, reached along `path`.
    RcuItr(Path, FieldMap),
    /// Read-side iterator; readers track no path or fields.
    RcuItrBare,
    /// Allocated but not yet published.
    RcuFresh(FieldMap),
    Unlinked,
    Undef,
    Freeable,
    RcuRoot,
    Bool,
}

impl RcuType {
    pub fn itr(path: Path) -> Self {
        RcuType::RcuItr(path, FieldMap::new())
    }

    pub fn name(&self) -> &'static str {
        match self {
            RcuType::RcuItr(..) | RcuType::RcuItrBare => "rcuItr",
            RcuType::RcuFresh(_) => "rcuFresh",
            RcuType::Unlinked => "unlinked",
            RcuType::Undef => "undef",
            RcuType::Freeable => "freeable",
            RcuType::RcuRoot => "rcuRoot",
            RcuType::Bool => "bool",
        }
    }

    pub fn fmap(&self) -> Option<&FieldMap> {
        match self {
            RcuType::RcuItr(_, n) | RcuType::RcuFresh(n) => Some(n),
            _ => None,
        }
    }

    /// Linear types may never be silently discarded.
    pub fn is_linear(&self) -> bool {
        matches!(self, RcuType::RcuFresh(_) | RcuType::Unlinked | RcuType::Freeable)
    }

    /// Can the binding be overwritten (after coercion to undef)?
    pub fn droppable(&self) -> bool {
        matches!(
            self,
            RcuType::Undef | RcuType::RcuItr(..) | RcuType::RcuItrBare | RcuType::Bool
        )
    }
}

impl fmt::Display for RcuType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RcuType::RcuItr(p, n) => write!(f, "rcuItr {p} {n}"),
            RcuType::RcuFresh(n) => write!(f, "rcuFresh {n}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Splits on `sep` outside `()` and `{}`.
pub(crate) fn split_outside(text: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' | '{' => depth += 1,
            ')' | '}' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&text[start..]);
    out
}

fn parse_fmap(text: &str) -> Result<FieldMap, TypeParseError> {
    let inner = text
        .trim()
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| perr(text, "field map must be braced"))?;
    let mut entries = Vec::new();
    for item in split_outside(inner, ',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (k, v) = ["->", "⇀", "↦"]
            .iter()
            .find_map(|arrow| item.split_once(arrow))
            .ok_or_else(|| perr(text, format!("entry `{item}` lacks `->`")))?;
        let fields: std::collections::BTreeSet<Field> =
            parse_field_set(k).ok_or_else(|| perr(text, format!("bad key `{k}`")))?;
        let v = v.trim();
        let target = match v {
            "null" => Target::Null,
            v if !v.is_empty() && v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                Target::Var(v.to_string())
            }
            _ => return Err(perr(text, format!("bad target `{v}`"))),
        };
        entries.push((FieldKey::of(fields), target));
    }
    FieldMap::from_entries(entries).map_err(|e| perr(text, e.to_string()))
}

/// Splits `<path> {map}` into its two parts.
fn split_path_map(rest: &str) -> (&str, Option<&str>) {
    match rest.find('{') {
        Some(i) => (rest[..i].trim(), Some(rest[i..].trim())),
        None => (rest.trim(), None),
    }
}

impl From<RcuType> for String {
    fn from(t: RcuType) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for RcuType {
    type Error = TypeParseError;

    fn try_from(s: String) -> Result<RcuType, TypeParseError> {
        s.parse()
    }
}

impl FromStr for RcuType {
    type Err = TypeParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let t = text.trim();
        let (head, rest) = match t.find(|c: char| c.is_whitespace() || c == '{') {
            Some(i) => (&t[..i], t[i..].trim()),
            None => (t, ""),
        };
        let simple = |ty: RcuType| {
            if rest.is_empty() {
                Ok(ty)
            } else {
                Err(perr(text, format!("`{head}` takes no arguments")))
            }
        };
        match head {
            "rcuItr" if rest.is_empty() => Ok(RcuType::RcuItrBare),
            "rcuItr" => {
                let (p, m) = split_path_map(rest);
                let path: Path = p.parse().map_err(|e: crate::paths::PathError| perr(text, e.to_string()))?;
                let fmap = m.map(parse_fmap).transpose()?.unwrap_or_default();
                Ok(RcuType::RcuItr(path, fmap))
            }
            "rcuFresh" => {
                let fmap = if rest.is_empty() { FieldMap::new() } else { parse_fmap(rest)? };
                Ok(RcuType::RcuFresh(fmap))
            }
            "unlinked" => simple(RcuType::Unlinked),
            "undef" => simple(RcuType::Undef),
            "freeable" => simple(RcuType::Freeable),
            "rcuRoot" => simple(RcuType::RcuRoot),
            "bool" => simple(RcuType::Bool),
            _ => Err(perr(text, format!("unknown type constructor `{head}`"))),
        }
    }
}

/// T ≺: T′
pub fn type_subtype(a: &RcuType, b: &RcuType) -> bool {
    use RcuType::*;
    match (a, b) {
        (RcuItr(..) | RcuItrBare, Undef) => true,
        (RcuItr(p1, n1), RcuItr(p2, n2)) => path_subtype(p1, p2) && fieldmap_subtype(n1, n2),
        _ => a == b,
    }
}

/// Γ — at most one binding per variable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeEnv {
    bindings: BTreeMap<String, RcuType>,
}

impl TypeEnv {
    pub fn new() -> Self {
        TypeEnv::default()
    }

    pub fn get(&self, x: &str) -> Option<&RcuType> {
        self.bindings.get(x)
    }

    pub fn insert(&mut self, x: impl Into<String>, t: RcuType) {
        self.bindings.insert(x.into(), t);
    }

    pub fn remove(&mut self, x: &str) -> Option<RcuType> {
        self.bindings.remove(x)
    }

    pub fn contains(&self, x: &str) -> bool {
        self.bindings.contains_key(x)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RcuType)> {
        self.bindings.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut RcuType)> {
        self.bindings.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    /// Does any binding's field map mention `x`?
    pub fn mentioned_in_maps(&self, x: &str) -> bool {
        self.bindings.values().any(|t| t.fmap().is_some_and(|n| n.mentions(x)))
    }

    /// Variables whose binding is an rcuItr with a path.
    pub fn iterators(&self) -> impl Iterator<Item = (&String, &Path, &FieldMap)> {
        self.bindings.iter().filter_map(|(x, t)| match t {
            RcuType::RcuItr(p, n) => Some((x, p, n)),
            _ => None,
        })
    }

    /// Γ[k := 0]
    pub fn with_zero(&self, k: &IndexVar) -> TypeEnv {
        self.map_paths(|p| p.with_zero(k))
    }

    pub fn map_paths(&self, f: impl Fn(&Path) -> Path) -> TypeEnv {
        let bindings = self
            .bindings
            .iter()
            .map(|(x, t)| {
                let t = match t {
                    RcuType::RcuItr(p, n) => RcuType::RcuItr(f(p), n.clone()),
                    t => t.clone(),
                };
                (x.clone(), t)
            })
            .collect();
        TypeEnv { bindings }
    }
}

impl FromIterator<(String, RcuType)> for TypeEnv {
    fn from_iter<I: IntoIterator<Item = (String, RcuType)>>(iter: I) -> Self {
        TypeEnv { bindings: iter.into_iter().collect() }
    }
}

impl fmt::Display for TypeEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (x, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{x}: {t}")?;
        }
        Ok(())
    }
}

/// Splits `x: T, y: T'` into raw `(name, type-text)` pairs.
pub fn split_bindings(text: &str) -> Result<Vec<(String, String)>, TypeParseError> {
    let mut out = Vec::new();
    for item in split_outside(text, ',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (x, t) = item
            .split_once(':')
            .ok_or_else(|| perr(item, "binding needs `name: type`"))?;
        let x = x.trim();
        if x.is_empty() || !x.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(perr(item, format!("bad variable name `{x}`")));
        }
        out.push((x.to_string(), t.trim().to_string()));
    }
    Ok(out)
}

impl FromStr for TypeEnv {
    type Err = TypeParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut env = TypeEnv::new();
        for (x, t) in split_bindings(text)? {
            if env.contains(&x) {
                return Err(perr(text, format!("duplicate binding for `{x}`")));
            }
            env.insert(x, t.parse()?);
        }
        Ok(env)
    }
}

/// Γ ≺: Γ′ — pointwise on dom(Γ′); bindings absent from Γ′ must be
/// droppable.
pub fn env_subtype(a: &TypeEnv, b: &TypeEnv) -> bool {
    b.bindings
        .iter()
        .all(|(x, tb)| a.get(x).is_some_and(|ta| type_subtype(ta, tb)))
        && a.bindings.iter().all(|(x, ta)| b.contains(x) || ta.droppable())
}

/// Γ[ρ.f^k / ρ.f^k.f] over every path.
pub fn env_reindex(g: &TypeEnv, k: &IndexVar, fields: &std::collections::BTreeSet<Field>) -> TypeEnv {
    g.map_paths(|p| reindex_path(p, k, fields))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    NoFresh,
    NoUnlinked,
    NoFreeable,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::NoFresh, Gate::NoUnlinked, Gate::NoFreeable];

    fn blocks(self, t: &RcuType) -> bool {
        matches!(
            (self, t),
            (Gate::NoFresh, RcuType::RcuFresh(_))
                | (Gate::NoUnlinked, RcuType::Unlinked)
                | (Gate::NoFreeable, RcuType::Freeable)
        )
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gate::NoFresh => "NoFresh",
            Gate::NoUnlinked => "NoUnlinked",
            Gate::NoFreeable => "NoFreeable",
        })
    }
}

pub fn env_gate(g: &TypeEnv, which: Gate) -> bool {
    gate_violators(g, which).is_empty()
}

pub fn gate_violators(g: &TypeEnv, which: Gate) -> Vec<&str> {
    g.bindings.iter().filter(|(_, t)| which.blocks(t)).map(|(x, _)| x.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> RcuType {
        s.parse().unwrap()
    }

    #[test]
    fn parse_types() {
        assert_eq!(t("rcuItr"), RcuType::RcuItrBare);
        assert_eq!(t("rcuItr eps"), RcuType::itr(Path::eps()));
        assert_eq!(t("rcuItr eps {}"), RcuType::itr(Path::eps()));
        let x = t("rcuItr Next^k.Next {Next -> cur}");
        assert_eq!(x.to_string(), "rcuItr Next^k.Next { Next -> cur }");
        assert_eq!(t(&x.to_string()), x);
        assert_eq!(t("rcuFresh"), RcuType::RcuFresh(FieldMap::new()));
        assert!("rcuRoot x".parse::<RcuType>().is_err());
        assert!("banana".parse::<RcuType>().is_err());
    }

    #[test]
    fn subtype_examples() {
        assert!(type_subtype(&RcuType::Unlinked, &RcuType::Unlinked));
        assert!(type_subtype(&t("rcuItr Next {Next -> z}"), &RcuType::Undef));
        assert!(!type_subtype(&RcuType::Undef, &t("rcuItr eps")));
        assert!(!type_subtype(&RcuType::Unlinked, &RcuType::Undef));
    }

    #[test]
    fn env_examples() {
        let a: TypeEnv = "cur: rcuItr Left {}, par: rcuItr eps {Left -> cur}".parse().unwrap();
        let b: TypeEnv =
            "cur: rcuItr (Left|Right) {}, par: rcuItr eps {Left|Right -> cur}".parse().unwrap();
        assert!(env_subtype(&a, &a));
        assert!(env_subtype(&a, &b));
        assert!(!env_subtype(&b, &a));
        let u: TypeEnv = "x: unlinked".parse().unwrap();
        let d: TypeEnv = "x: undef".parse().unwrap();
        assert!(!env_subtype(&u, &d));
        assert!(!env_subtype(&u, &TypeEnv::new()));
        assert!(env_gate(&d, Gate::NoUnlinked));
        assert!(!env_gate(&u, Gate::NoUnlinked));
    }

    #[test]
    fn reindex_env() {
        let g: TypeEnv =
            "par: rcuItr Next^k.Next {Next -> cur}, cur: rcuItr Next^k.Next.Next".parse().unwrap();
        let want: TypeEnv =
            "par: rcuItr Next^k {Next -> cur}, cur: rcuItr Next^k.Next".parse().unwrap();
        let next = ["Next".to_string()].into_iter().collect();
        assert_eq!(env_reindex(&g, &IndexVar::new("k"), &next), want);
    }
}
