//! Initial-heap descriptions: one `(loc, field=value, ...)` tuple per line.
//!
//! ```text
//! // sentinel first: the first tuple names the root
//! (head, Next=n1)
//! (n1, Next=n2, data=1)
//! (n2, Next=null, data=2)
//! ```
//!
//! Omitted rcu fields are `null`, omitted data fields are `0`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecVal {
    Ref(String),
    Null,
    Int(i64),
}

impl fmt::Display for SpecVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecVal::Ref(r) => f.write_str(r),
            SpecVal::Null => f.write_str("null"),
            SpecVal::Int(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecNode {
    pub name: String,
    pub fields: BTreeMap<String, SpecVal>,
}

/// The first node is the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeapSpec {
    pub nodes: Vec<SpecNode>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("heap spec line {line}: {message}")]
pub struct HeapSpecError {
    pub line: usize,
    pub message: String,
}

impl HeapSpec {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// A root followed by `n` nodes chained through `link`; node `i`
    /// carries `data = i` when a data field is given.
    pub fn chain(link: &str, data: Option<&str>, n: usize) -> HeapSpec {
        let nodes = (0..=n)
            .map(|i| {
                let mut fields = BTreeMap::new();
                if i < n {
                    fields.insert(link.to_string(), SpecVal::Ref(format!("n{}", i + 1)));
                }
                if let (Some(d), true) = (data, i > 0) {
                    fields.insert(d.to_string(), SpecVal::Int(i as i64));
                }
                SpecNode { name: if i == 0 { "root".into() } else { format!("n{i}") }, fields }
            })
            .collect();
        HeapSpec { nodes }
    }
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for HeapSpec {
    type Err = HeapSpecError;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        let mut nodes = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let line = i + 1;
            let err = |m: String| HeapSpecError { line, message: m };
            let text = raw.split("//").next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let inner = text
                .strip_prefix('(')
                .and_then(|t| t.strip_suffix(')'))
                .ok_or_else(|| err("expected `(loc, field=value, ...)`".into()))?;
            let mut parts = inner.split(',').map(str::trim);
            let name = parts.next().unwrap_or("");
            if !is_ident(name) {
                return Err(err(format!("bad location name `{name}`")));
            }
            let mut fields = BTreeMap::new();
            for p in parts {
                let (f, v) = p.split_once('=').ok_or_else(|| err(format!("expected field=value, got `{p}`")))?;
                let (f, v) = (f.trim(), v.trim());
                if !is_ident(f) {
                    return Err(err(format!("bad field name `{f}`")));
                }
                let val = if v == "null" {
                    SpecVal::Null
                } else if let Ok(n) = v.parse::<i64>() {
                    SpecVal::Int(n)
                } else if is_ident(v) {
                    SpecVal::Ref(v.to_string())
                } else {
                    return Err(err(format!("bad value `{v}`")));
                };
                if fields.insert(f.to_string(), val).is_some() {
                    return Err(err(format!("field `{f}` given twice")));
                }
            }
            nodes.push(SpecNode { name: name.to_string(), fields });
        }
        Ok(HeapSpec { nodes })
    }
}

impl fmt::Display for HeapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            write!(f, "({}", n.name)?;
            for (k, v) in &n.fields {
                write!(f, ", {k}={v}")?;
            }
            writeln!(f, ")")?;
        }
        Ok(())
    }
}
