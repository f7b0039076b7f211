//! The program corpus: a manifest of positive and negative cases, and a
//! runner that checks each case statically and dynamically.
//!
//! Every negative is expected to be rejected by the checker and, unless it
//! is marked `static_only`, to produce an unsafe schedule under
//! exploration that replays to the same verdict.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{annotate_diff, Golden};
use crate::checker::{check_program, CheckOptions};
use crate::explorer::{explore, replay, ExploreBounds};
use crate::lang::{parse, Program};
use crate::machine::HeapSpec;

pub const POSITIVES: &[&str] = &[
    "bag_add",
    "bag_remove",
    "bag_member",
    "bst_delete_leafish",
    "bst_delete_one_child",
    "bst_delete_two_children",
];

pub const NEGATIVES: &[&str] = &[
    "no_sync_before_free",
    "double_free",
    "free_without_unlink",
    "unlink_two_nodes",
    "cycle_insert",
    "leak_unlinked_at_writeend",
    "fresh_escapes_block",
    "reader_writes",
    "rcuitr_escapes_block",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    Accept,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBounds {
    pub readers: usize,
    pub max_steps: usize,
    pub max_heap_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCase {
    pub name: String,
    pub source: PathBuf,
    pub expect: Expect,
    /// Rule expected in the checker's diagnostic (negatives).
    #[serde(default)]
    pub rule: Option<String>,
    #[serde(default)]
    pub golden: Option<PathBuf>,
    #[serde(default)]
    pub heaps: Vec<PathBuf>,
    /// Reasons exploration must report (negatives).
    #[serde(default)]
    pub reasons: Vec<String>,
    /// A bug no execution can observe; excluded from the dynamic half.
    #[serde(default)]
    pub static_only: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub bounds: CorpusBounds,
    pub cases: Vec<CorpusCase>,
    /// Directory paths are relative to.
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Bad { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

impl Manifest {
    /// Loads `dir/manifest.json`.
    pub fn load(dir: &Path) -> Result<Manifest, CorpusError> {
        let path = dir.join("manifest.json");
        let mut m: Manifest = serde_json::from_str(&read(&path)?)
            .map_err(|e| CorpusError::Bad { path: path.clone(), message: e.to_string() })?;
        m.root = dir.to_path_buf();
        Ok(m)
    }

    pub fn case(&self, name: &str) -> Option<&CorpusCase> {
        self.cases.iter().find(|c| c.name == name)
    }

    pub fn explore_bounds(&self) -> ExploreBounds {
        ExploreBounds {
            max_steps: self.bounds.max_steps,
            max_heap_nodes: self.bounds.max_heap_nodes,
            reader_count: self.bounds.readers,
            dedup: true,
            sample: 1,
        }
    }

    pub fn program(&self, c: &CorpusCase) -> Result<Program, CorpusError> {
        let path = self.root.join(&c.source);
        parse(&read(&path)?).map_err(|es| CorpusError::Bad {
            path,
            message: es.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "),
        })
    }

    pub fn heap(&self, rel: &Path) -> Result<HeapSpec, CorpusError> {
        let path = self.root.join(rel);
        read(&path)?.parse().map_err(|e: crate::machine::HeapSpecError| CorpusError::Bad { path, message: e.to_string() })
    }

    pub fn golden(&self, rel: &Path) -> Result<Golden, CorpusError> {
        let path = self.root.join(rel);
        read(&path)?.parse().map_err(|e: crate::annotate::GoldenParseError| CorpusError::Bad { path, message: e.to_string() })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HeapRun {
    pub heap: PathBuf,
    pub states: usize,
    pub exhausted: bool,
    pub reasons: Vec<String>,
    /// Every reported schedule replayed to the reported verdict.
    pub replay_agrees: bool,
    pub elapsed: Duration,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub expect: Expect,
    pub accepted: bool,
    pub diagnostic: Option<String>,
    pub rule: Option<String>,
    pub golden_mismatches: Option<usize>,
    pub golden_error: Option<String>,
    pub runs: Vec<HeapRun>,
    pub problems: Vec<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

fn run_heap(m: &Manifest, p: &Program, heap: &Path, bounds: &ExploreBounds) -> HeapRun {
    let t0 = Instant::now();
    let mut run = HeapRun {
        heap: heap.to_path_buf(),
        states: 0,
        exhausted: false,
        reasons: vec![],
        replay_agrees: true,
        elapsed: Duration::ZERO,
        error: None,
    };
    let spec = match m.heap(heap) {
        Ok(s) => s,
        Err(e) => {
            run.error = Some(e.to_string());
            return run;
        }
    };
    match explore(p, &spec, bounds) {
        Err(e) => run.error = Some(e.to_string()),
        Ok(r) => {
            run.states = r.states_explored;
            run.exhausted = r.exhausted;
            run.reasons = r.reasons().into_iter().collect();
            for f in &r.violations {
                let same = replay(p, &spec, bounds.reader_count, &f.schedule).is_ok_and(|rp| rp.verdict == f.verdict);
                run.replay_agrees &= same;
            }
        }
    }
    run.elapsed = t0.elapsed();
    run
}

/// Runs one case: checker verdict, golden diff, and exploration.
pub fn run_case(m: &Manifest, c: &CorpusCase, opts: &CheckOptions, dynamic: bool) -> CaseResult {
    let mut res = CaseResult {
        name: c.name.clone(),
        expect: c.expect,
        accepted: false,
        diagnostic: None,
        rule: None,
        golden_mismatches: None,
        golden_error: None,
        runs: vec![],
        problems: vec![],
    };
    let p = match m.program(c) {
        Ok(p) => p,
        Err(e) => {
            res.problems.push(e.to_string());
            return res;
        }
    };
    let report = check_program(&p, opts);
    res.accepted = report.ok();
    if let Some(d) = report.diagnostics().next() {
        res.diagnostic = Some(d.to_string());
        res.rule = Some(d.rule.clone());
    }
    match (c.expect, res.accepted) {
        (Expect::Accept, false) => res.problems.push(format!("rejected: {}", res.diagnostic.clone().unwrap_or_default())),
        (Expect::Reject, true) => res.problems.push("accepted".into()),
        (Expect::Reject, false) if c.rule.is_some() && c.rule != res.rule => res.problems.push(format!(
            "rejected by {}, expected {}",
            res.rule.clone().unwrap_or_default(),
            c.rule.clone().unwrap_or_default()
        )),
        _ => {}
    }
    if let Some(g) = &c.golden {
        match m.golden(g).map(|g| annotate_diff(&report.sites, &g)) {
            Ok(Ok(d)) => {
                res.golden_mismatches = Some(d.mismatches.len());
                res.problems.extend(d.mismatches.iter().map(|x| x.to_string()));
            }
            Ok(Err(e)) => res.golden_error = Some(e.to_string()),
            Err(e) => res.golden_error = Some(e.to_string()),
        }
        if let Some(e) = &res.golden_error {
            res.problems.push(e.clone());
        }
    }
    if dynamic && !c.static_only {
        let bounds = m.explore_bounds();
        for h in &c.heaps {
            let run = run_heap(m, &p, h, &bounds);
            let label = h.display();
            if let Some(e) = &run.error {
                res.problems.push(format!("{label}: {e}"));
            }
            match c.expect {
                Expect::Accept => {
                    if !run.reasons.is_empty() {
                        res.problems.push(format!("{label}: unsafe: {}", run.reasons.join(", ")));
                    }
                    if !run.exhausted {
                        res.problems.push(format!("{label}: exploration not exhausted"));
                    }
                }
                Expect::Reject => {
                    if run.reasons.is_empty() {
                        res.problems.push(format!("{label}: no violating schedule found"));
                    }
                    for want in &c.reasons {
                        if !run.reasons.contains(want) {
                            res.problems.push(format!("{label}: expected {want}, found {}", run.reasons.join(", ")));
                        }
                    }
                }
            }
            if !run.replay_agrees {
                res.problems.push(format!("{label}: replay disagrees with exploration"));
            }
            res.runs.push(run);
        }
    }
    res
}
