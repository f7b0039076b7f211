use std::fmt::{self, Write};

use super::ast::*;

impl fmt::Display for Stmt {
    /// Single-line rendering; sequences are joined with `; `.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stmt::Seq(a, b) => write!(f, "{a}; {b}"),
            Stmt::IfBool { b, .. } => write!(f, "if ({b}) {{ … }}"),
            Stmt::IfFieldEq { x, f: fl, z, .. } => write!(f, "if ({x}.{fl} == {z}) {{ … }}"),
            Stmt::IfFieldNull { x, f: fl, .. } => write!(f, "if ({x}.{fl} == null) {{ … }}"),
            Stmt::WhileBool { b, .. } => write!(f, "while ({b}) {{ … }}"),
            Stmt::WhileFieldNonNull { x, f: fl, .. } => write!(f, "while ({x}.{fl} != null) {{ … }}"),
            s => f.write_str(&atomic(s)),
        }
    }
}

fn atomic(s: &Stmt) -> String {
    match s {
        Stmt::RootRead { y, root, .. } => format!("{y} = {root}"),
        Stmt::VarRead { z, x, .. } => format!("{z} = {x}"),
        Stmt::FieldRead { z, x, f, .. } => format!("{z} = {x}.{f}"),
        Stmt::FieldWrite { x, f, rhs, .. } => {
            format!("{x}.{f} = {}", rhs.as_deref().unwrap_or("null"))
        }
        Stmt::Alloc { x, .. } => format!("{x} = new"),
        Stmt::Free { x, .. } => format!("free({x})"),
        Stmt::SyncStart { .. } => "sync_start".into(),
        Stmt::SyncStop { .. } => "sync_stop".into(),
        Stmt::Skip { .. } => "skip".into(),
        Stmt::DataRead { v, x, f, .. } => format!("{v} = {x}.{f}"),
        Stmt::DataWrite { x, f, v, .. } => format!("{x}.{f} = {v}"),
        Stmt::BoolAssign { b, expr, .. } => format!("{b} = {expr}"),
        Stmt::DataSet { v, value, .. } => format!("{v} = {value}"),
        Stmt::Assert { label, .. } => format!("$assert{{{label}}}"),
        _ => unreachable!("compound statement"),
    }
}

struct Printer {
    out: String,
    indent: usize,
}

impl Printer {
    fn line(&mut self, text: &str) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn body(&mut self, s: &Stmt) {
        self.indent += 1;
        for st in s.flatten() {
            self.stmt(st);
        }
        self.indent -= 1;
    }

    fn annot(a: &Option<LoopAnnotation>) -> String {
        let Some(a) = a else { return String::new() };
        let mut s = format!(" @invariant{{{}}}", a.invariant);
        for (k, fs) in &a.reindex {
            let fs: Vec<&str> = fs.iter().map(String::as_str).collect();
            let _ = write!(s, " @reindex({k}, {})", fs.join("|"));
        }
        s
    }

    fn branches(&mut self, head: String, then: &Stmt, els: &Stmt) {
        self.line(&format!("{head} {{"));
        self.body(then);
        if matches!(els, Stmt::Skip { .. }) {
            self.line("}");
        } else {
            self.line("} else {");
            self.body(els);
            self.line("}");
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Seq(..) => self.body_inline(s),
            Stmt::IfBool { b, then, els, .. } => self.branches(format!("if ({b})"), then, els),
            Stmt::IfFieldEq { x, f, z, then, els, .. } => {
                self.branches(format!("if ({x}.{f} == {z})"), then, els)
            }
            Stmt::IfFieldNull { x, f, then, els, .. } => {
                self.branches(format!("if ({x}.{f} == null)"), then, els)
            }
            Stmt::WhileBool { b, body, annot, .. } => {
                self.line(&format!("while ({b}){} {{", Self::annot(annot)));
                self.body(body);
                self.line("}");
            }
            Stmt::WhileFieldNonNull { x, f, body, annot, .. } => {
                self.line(&format!("while ({x}.{f} != null){} {{", Self::annot(annot)));
                self.body(body);
                self.line("}");
            }
            Stmt::Assert { .. } => self.line(&atomic(s)),
            s => self.line(&format!("{};", atomic(s))),
        }
    }

    fn body_inline(&mut self, s: &Stmt) {
        for st in s.flatten() {
            self.stmt(st);
        }
    }
}

/// Canonical source text; `parse(pretty(p)) == p`.
pub fn pretty(p: &Program) -> String {
    let mut pr = Printer { out: String::new(), indent: 0 };
    let fields: Vec<String> = p
        .field_types
        .fields
        .iter()
        .map(|(f, k)| format!("{f}: {}", if *k == FieldKind::Rcu { "rcu" } else { "normal" }))
        .collect();
    pr.line(&format!("fields {{ {} }}", fields.join(", ")));
    pr.line(&format!("root {};", p.root_var));
    for t in &p.threads {
        pr.line("");
        let head = match t.kind {
            ThreadKind::Writer => format!("writer {} {{", t.name),
            ThreadKind::Reader if t.count > 1 => format!("reader {} * {} {{", t.name, t.count),
            ThreadKind::Reader => format!("reader {} {{", t.name),
        };
        pr.line(&head);
        pr.indent += 1;
        for b in &t.blocks {
            let kw = match b.kind {
                BlockKind::Write => "rcu_write",
                BlockKind::Read => "rcu_read",
            };
            match &b.binder {
                Some(bd) => pr.line(&format!("{kw} {}.{} as {} {{", bd.root, bd.field, bd.var)),
                None => pr.line(&format!("{kw} {{")),
            }
            pr.body(&b.body);
            pr.line("}");
        }
        pr.indent -= 1;
        pr.line("}");
    }
    pr.out
}
