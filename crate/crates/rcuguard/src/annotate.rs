//! Golden annotation files and structural diffing against computed
//! environments.
//!
//! A golden file has one `label: x: T, y: T'` line per assertion site.
//! Only the listed variables are compared; `x: _` requires `x` to be bound
//! without constraining its type.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::typesys::{split_bindings, RcuType, TypeEnv};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GoldenSite {
    pub label: String,
    /// `None` is the `_` wildcard.
    pub bindings: Vec<(String, Option<RcuType>)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Golden {
    pub sites: Vec<GoldenSite>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("golden line {line}: {message}")]
pub struct GoldenParseError {
    pub line: usize,
    pub message: String,
}

impl FromStr for Golden {
    type Err = GoldenParseError;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        let mut sites: Vec<GoldenSite> = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let err = |m: String| GoldenParseError { line: i + 1, message: m };
            let text = raw.split("//").next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let (label, rest) = text.split_once(':').ok_or_else(|| err("expected `label: bindings`".into()))?;
            let label = label.trim();
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(format!("bad label `{label}`")));
            }
            if sites.iter().any(|s| s.label == label) {
                return Err(err(format!("site `{label}` listed twice")));
            }
            let mut bindings = Vec::new();
            for (x, t) in split_bindings(rest).map_err(|e| err(e.to_string()))? {
                let t = if t.trim() == "_" {
                    None
                } else {
                    Some(t.parse::<RcuType>().map_err(|e| err(e.to_string()))?)
                };
                bindings.push((x, t));
            }
            sites.push(GoldenSite { label: label.to_string(), bindings });
        }
        Ok(Golden { sites })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mismatch {
    Unbound { site: String, var: String, expected: String },
    Differs { site: String, var: String, expected: String, actual: String },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Unbound { site, var, expected } => {
                write!(f, "{site}: `{var}` expected `{expected}`, but it is not bound")
            }
            Mismatch::Differs { site, var, expected, actual } => {
                write!(f, "{site}: `{var}` expected `{expected}`, computed `{actual}`")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AnnotateDiff {
    pub sites: usize,
    pub bindings: usize,
    pub mismatches: Vec<Mismatch>,
}

#[derive(Debug, Error, PartialEq, Eq, Serialize)]
#[error("assertion sites differ: missing from program {missing:?}, missing from golden {extra:?}")]
pub struct SiteCountMismatch {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

/// Compares computed environments with a golden file. The two must name
/// the same set of sites.
pub fn annotate_diff(computed: &BTreeMap<String, TypeEnv>, golden: &Golden) -> Result<AnnotateDiff, SiteCountMismatch> {
    let missing: Vec<String> =
        golden.sites.iter().filter(|s| !computed.contains_key(&s.label)).map(|s| s.label.clone()).collect();
    let extra: Vec<String> =
        computed.keys().filter(|l| !golden.sites.iter().any(|s| &s.label == *l)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(SiteCountMismatch { missing, extra });
    }
    let mut out = AnnotateDiff { sites: golden.sites.len(), ..Default::default() };
    for site in &golden.sites {
        let env = &computed[&site.label];
        for (x, want) in &site.bindings {
            out.bindings += 1;
            let shown = want.as_ref().map_or("_".to_string(), |t| t.to_string());
            match (env.get(x), want) {
                (None, _) => out.mismatches.push(Mismatch::Unbound {
                    site: site.label.clone(),
                    var: x.clone(),
                    expected: shown,
                }),
                (Some(_), None) => {}
                (Some(got), Some(want)) if got == want => {}
                (Some(got), Some(_)) => out.mismatches.push(Mismatch::Differs {
                    site: site.label.clone(),
                    var: x.clone(),
                    expected: shown,
                    actual: got.to_string(),
                }),
            }
        }
    }
    Ok(out)
}

/// Renders computed environments in golden-file syntax.
pub fn render_sites(sites: &BTreeMap<String, TypeEnv>, order: &[String]) -> String {
    let mut out = String::new();
    for l in order {
        if let Some(env) = sites.get(l) {
            out.push_str(&format!("{l}: {env}\n"));
        }
    }
    out
}

/// Labels of `$assert` sites in source order.
pub fn site_order(p: &crate::lang::Program) -> Vec<String> {
    let mut out = Vec::new();
    for t in &p.threads {
        for b in &t.blocks {
            b.body.walk(&mut |s| {
                if let crate::lang::Stmt::Assert { label, .. } = s {
                    if !out.contains(label) {
                        out.push(label.clone());
                    }
                }
            });
        }
    }
    out
}
