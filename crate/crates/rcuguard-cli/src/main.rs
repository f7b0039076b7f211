use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rcuguard::annotate::{annotate_diff, render_sites, site_order, Golden};
use rcuguard::corpus::{run_case, Manifest};
use rcuguard::explorer::{explore, replay, ExploreBounds};
use rcuguard::lang::FieldKind;
use rcuguard::machine::HeapSpec;
use rcuguard::{check_program, parse, CheckOptions, Program};

/// Type checker and bounded model checker for RCU client programs.
#[derive(Parser)]
#[command(name = "rcuguard", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Type-check a program (exit 0 accepted, 1 rejected, 2 parse error).
    Check {
        file: PathBuf,
        #[command(flatten)]
        check: CheckFlags,
        #[arg(long)]
        json: bool,
    },
    /// Replay one schedule and print its trace.
    Run {
        file: PathBuf,
        /// Thread ids, whitespace or comma separated, or a JSON array or
        /// object with a `schedule` field.
        schedule: PathBuf,
        #[command(flatten)]
        heap: HeapFlags,
        #[arg(long, default_value_t = 2)]
        readers: usize,
        #[command(flatten)]
        check: CheckFlags,
        #[arg(long)]
        json: bool,
    },
    /// Explore all interleavings within bounds (exit 0 safe, 1 violation,
    /// 3 bounds hit with no violation).
    Explore {
        file: PathBuf,
        #[command(flatten)]
        heap: HeapFlags,
        #[arg(long, default_value_t = 2)]
        readers: usize,
        /// Per-thread bound on shared-memory steps.
        #[arg(long, default_value_t = 40)]
        max_steps: usize,
        #[arg(long, default_value_t = 5)]
        max_heap_nodes: usize,
        #[arg(long)]
        no_dedup: bool,
        /// Check the axioms every N steps.
        #[arg(long, default_value_t = 1)]
        sample: usize,
        #[command(flatten)]
        check: CheckFlags,
        #[arg(long)]
        json: bool,
    },
    /// Print the environment at each `$assert` site, or diff against a
    /// golden file.
    Annotate {
        file: PathBuf,
        golden: Option<PathBuf>,
        #[command(flatten)]
        check: CheckFlags,
        #[arg(long)]
        json: bool,
    },
    /// Run the corpus suites.
    Corpus {
        #[arg(default_value = "corpus")]
        dir: PathBuf,
        /// Skip exploration.
        #[arg(long)]
        static_only: bool,
        #[command(flatten)]
        check: CheckFlags,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct CheckFlags {
    /// Index-variable enumeration bound for MayAlias.
    #[arg(long, default_value_t = 3)]
    mayalias_bound: usize,
    /// Run or explore even if the checker rejects the program.
    #[arg(long = "unsafe")]
    allow_unsafe: bool,
}

impl CheckFlags {
    fn options(&self) -> CheckOptions {
        CheckOptions { alias_bound: self.mayalias_bound }
    }
}

#[derive(Args)]
struct HeapFlags {
    /// Initial heap: a root followed by a chain of N nodes.
    #[arg(long, default_value_t = 3, conflicts_with = "seed_heap")]
    heap: usize,
    /// Initial heap from a file of `(loc, field=value, ...)` lines.
    #[arg(long)]
    seed_heap: Option<PathBuf>,
}

impl HeapFlags {
    fn spec(&self, p: &Program) -> Result<HeapSpec> {
        if let Some(f) = &self.seed_heap {
            return read(f)?.parse().with_context(|| f.display().to_string());
        }
        let fields = &p.field_types.fields;
        let link = fields.iter().find(|(_, k)| **k == FieldKind::Rcu).map(|(f, _)| f.as_str());
        let data = fields.iter().find(|(_, k)| **k == FieldKind::Normal).map(|(f, _)| f.as_str());
        match link {
            Some(l) => Ok(HeapSpec::chain(l, data, self.heap)),
            None => Ok(HeapSpec::chain("", data, 0)),
        }
    }
}

/// Usage and parse errors.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn load(path: &Path) -> Result<Program> {
    let src = read(path)?;
    parse(&src).map_err(|es| {
        let msgs: Vec<String> = es.iter().map(|e| format!("{}:{e}", path.display())).collect();
        Usage(msgs.join("\n")).into()
    })
}

struct Style {
    color: bool,
}

impl Style {
    fn new() -> Style {
        let off = std::env::var("RCUGUARD_COLOR").is_ok_and(|v| v == "0");
        Style { color: !off && std::io::stdout().is_terminal() }
    }

    fn paint(&self, code: &str, s: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }

    fn ok(&self, s: &str) -> String {
        self.paint("32", s)
    }

    fn bad(&self, s: &str) -> String {
        self.paint("31;1", s)
    }

    fn warn(&self, s: &str) -> String {
        self.paint("33", s)
    }
}

fn parse_schedule(text: &str) -> Result<Vec<usize>> {
    let t = text.trim_start();
    if t.starts_with('[') {
        return Ok(serde_json::from_str(t)?);
    }
    if t.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(t)?;
        return Ok(serde_json::from_value(v.get("schedule").cloned().context("no `schedule` field")?)?);
    }
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split(['#']).next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()) {
            out.push(tok.parse().map_err(|_| Usage(format!("bad thread id `{tok}`")))?);
        }
    }
    Ok(out)
}

/// Refuses checker-rejected programs unless `--unsafe` is given.
fn gate(p: &Program, flags: &CheckFlags, st: &Style) -> Result<()> {
    if flags.allow_unsafe {
        return Ok(());
    }
    let report = check_program(p, &flags.options());
    if let Some(d) = report.diagnostics().next() {
        eprintln!("{} {d}", st.bad("rejected:"));
        bail!(Usage("program does not type-check; pass --unsafe to execute it anyway".into()));
    }
    Ok(())
}

// Writes to stdout fail instead of panicking, so a closed pipe is reportable.
macro_rules! outln {
    ($($t:tt)*) => { writeln!(std::io::stdout(), $($t)*)? };
}
macro_rules! out {
    ($($t:tt)*) => { write!(std::io::stdout(), $($t)*)? };
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let st = Style::new();
    match cli.cmd {
        Cmd::Check { file, check, json } => {
            let p = load(&file)?;
            let report = check_program(&p, &check.options());
            let diags: Vec<_> = report.diagnostics().collect();
            if json {
                print_json(&json!({ "file": file, "accepted": report.ok(), "diagnostics": diags }))?;
            } else if diags.is_empty() {
                outln!("{} {}", st.ok("ok"), file.display());
            } else {
                for d in &diags {
                    outln!("{}:{} {d}", file.display(), st.bad(" error"));
                    outln!("  environment: {}", d.env_before);
                }
            }
            Ok(if report.ok() { 0 } else { 1 })
        }
        Cmd::Run { file, schedule, heap, readers, check, json } => {
            let p = load(&file)?;
            gate(&p, &check, &st)?;
            let spec = heap.spec(&p)?;
            let sched = parse_schedule(&read(&schedule)?)?;
            let r = replay(&p, &spec, readers, &sched)?;
            if json {
                print_json(&r)?;
            } else {
                for l in &r.trace {
                    outln!("{l}");
                }
                for f in &r.faults {
                    outln!("{} {:?} in thread {}: {}", st.bad("fault"), f.kind, f.tid, f.instr);
                }
                for v in &r.violations {
                    outln!("{} {v}", st.bad("violation"));
                }
                outln!("{}", if r.verdict.is_safe() { st.ok("safe") } else { st.bad("unsafe") });
            }
            Ok(if r.verdict.is_safe() { 0 } else { 1 })
        }
        Cmd::Explore { file, heap, readers, max_steps, max_heap_nodes, no_dedup, sample, check, json } => {
            let p = load(&file)?;
            gate(&p, &check, &st)?;
            let spec = heap.spec(&p)?;
            let bounds = ExploreBounds { max_steps, max_heap_nodes, reader_count: readers, dedup: !no_dedup, sample };
            let r = explore(&p, &spec, &bounds).map_err(|e| Usage(e.to_string()))?;
            let code = if !r.safe() {
                1
            } else if !r.exhausted {
                3
            } else {
                0
            };
            if json {
                print_json(&r)?;
            } else {
                outln!(
                    "{} states, {} complete schedules, {} truncated",
                    r.states_explored, r.schedules_completed, r.truncated
                );
                for f in &r.violations {
                    let what: Vec<String> = f
                        .faults
                        .iter()
                        .map(|x| format!("{:?}", x.kind))
                        .chain(f.violations.iter().map(|v| v.to_string()))
                        .collect();
                    outln!("{} at step {}: {}", st.bad("violation"), f.step, what.join("; "));
                    let s: Vec<String> = f.schedule.iter().map(|t| t.to_string()).collect();
                    outln!("  schedule: {}", s.join(" "));
                }
                match code {
                    0 => outln!("{}", st.ok("safe (exhausted)")),
                    1 => outln!("{} {}", st.bad("unsafe:"), r.reasons().into_iter().collect::<Vec<_>>().join(", ")),
                    _ => outln!("{}", st.warn("no violation found, but the step bound was hit")),
                }
            }
            Ok(code)
        }
        Cmd::Annotate { file, golden, check, json } => {
            let p = load(&file)?;
            let report = check_program(&p, &check.options());
            for d in report.diagnostics() {
                eprintln!("{} {d}", st.bad("error:"));
            }
            let Some(g) = golden else {
                if json {
                    print_json(&report.sites)?;
                } else {
                    out!("{}", render_sites(&report.sites, &site_order(&p)));
                }
                return Ok(if report.ok() { 0 } else { 1 });
            };
            let g: Golden = read(&g)?.parse().map_err(|e: rcuguard::annotate::GoldenParseError| Usage(e.to_string()))?;
            match annotate_diff(&report.sites, &g) {
                Err(e) => {
                    if json {
                        print_json(&json!({ "error": "site_count_mismatch", "missing": e.missing, "extra": e.extra }))?;
                    } else {
                        outln!("{} {e}", st.bad("error:"));
                    }
                    Ok(1)
                }
                Ok(d) => {
                    if json {
                        print_json(&d)?;
                    } else {
                        for m in &d.mismatches {
                            outln!("{} {m}", st.bad("mismatch"));
                        }
                        outln!("{} sites, {} bindings, {} mismatches", d.sites, d.bindings, d.mismatches.len());
                    }
                    Ok(if d.mismatches.is_empty() && report.ok() { 0 } else { 1 })
                }
            }
        }
        Cmd::Corpus { dir, static_only, check, json } => {
            let m = Manifest::load(&dir).map_err(|e| Usage(e.to_string()))?;
            let results: Vec<_> = m.cases.iter().map(|c| run_case(&m, c, &check.options(), !static_only)).collect();
            let failed = results.iter().filter(|r| !r.passed()).count();
            if json {
                print_json(&results)?;
            } else {
                for r in &results {
                    let mark = if r.passed() { st.ok("pass") } else { st.bad("FAIL") };
                    let dynamic: Vec<String> = r
                        .runs
                        .iter()
                        .map(|h| {
                            let v = if h.reasons.is_empty() { "safe".to_string() } else { h.reasons.join(",") };
                            format!("{} states: {v}", h.states)
                        })
                        .collect();
                    let verdict = if r.accepted { "accepted".to_string() } else { format!("rejected ({})", r.rule.clone().unwrap_or_default()) };
                    outln!("{mark} {:<26} {verdict:<24} {}", r.name, dynamic.join("; "));
                    for pr in &r.problems {
                        outln!("     {pr}");
                    }
                }
                outln!("{} of {} cases passed", results.len() - failed, results.len());
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::from(141)
        }
        Err(e) => {
            eprintln!("rcuguard: {e:#}");
            ExitCode::from(2)
        }
    }
}
