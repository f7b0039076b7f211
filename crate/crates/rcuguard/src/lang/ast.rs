use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::paths::{Field, IndexVar};

/// Source position. Compares equal to every other span so that ASTs from
/// different layouts of the same program are structurally equal.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl Eq for Span {}

impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _: &mut H) {}
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Rcu,
    Normal,
}

/// FType: each field is either an RCU link or plain data.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldTypeTable {
    pub fields: BTreeMap<Field, FieldKind>,
}

impl FieldTypeTable {
    pub fn kind(&self, f: &str) -> Option<FieldKind> {
        self.fields.get(f).copied()
    }

    pub fn is_rcu(&self, f: &str) -> bool {
        self.kind(f) == Some(FieldKind::Rcu)
    }

    pub fn rcu_fields(&self) -> impl Iterator<Item = &Field> {
        self.fields.iter().filter(|(_, k)| **k == FieldKind::Rcu).map(|(f, _)| f)
    }

    /// Position of `f` in the (sorted) field order; heap objects are laid
    /// out in this order.
    pub fn index_of(&self, f: &str) -> Option<usize> {
        self.fields.keys().position(|g| g == f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Var(String),
    Int(i64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => f.write_str(v),
            Operand::Int(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn eval(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoolExpr {
    Const(bool),
    Var(String),
    Not(String),
    Cmp(CmpOp, Operand, Operand),
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Const(b) => write!(f, "{b}"),
            BoolExpr::Var(v) => f.write_str(v),
            BoolExpr::Not(v) => write!(f, "!{v}"),
            BoolExpr::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopAnnotation {
    /// Bindings overriding the entry environment, in type-environment
    /// syntax.
    pub invariant: String,
    pub reindex: Vec<(IndexVar, BTreeSet<Field>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stmt {
    /// `y = r` for the root variable `r`.
    RootRead { y: String, root: String, span: Span },
    /// `z = x`
    VarRead { z: String, x: String, span: Span },
    /// `z = x.f` for an rcu field.
    FieldRead { z: String, x: String, f: Field, span: Span },
    /// `x.f = y` or `x.f = null` for an rcu field.
    FieldWrite { x: String, f: Field, rhs: Option<String>, span: Span },
    Alloc { x: String, span: Span },
    Free { x: String, span: Span },
    SyncStart { span: Span },
    SyncStop { span: Span },
    Skip { span: Span },
    Seq(Box<Stmt>, Box<Stmt>),
    IfBool { b: String, then: Box<Stmt>, els: Box<Stmt>, span: Span },
    IfFieldEq { x: String, f: Field, z: String, then: Box<Stmt>, els: Box<Stmt>, span: Span },
    IfFieldNull { x: String, f: Field, then: Box<Stmt>, els: Box<Stmt>, span: Span },
    WhileBool { b: String, body: Box<Stmt>, annot: Option<LoopAnnotation>, span: Span },
    WhileFieldNonNull {
        x: String,
        f: Field,
        body: Box<Stmt>,
        annot: Option<LoopAnnotation>,
        span: Span,
    },
    /// `v = x.f` for a normal field.
    DataRead { v: String, x: String, f: Field, span: Span },
    /// `x.f = v` for a normal field.
    DataWrite { x: String, f: Field, v: Operand, span: Span },
    BoolAssign { b: String, expr: BoolExpr, span: Span },
    DataSet { v: String, value: Operand, span: Span },
    /// Annotation site `$assert{label}`; no effect.
    Assert { label: String, span: Span },
}

impl Stmt {
    pub fn skip() -> Stmt {
        Stmt::Skip { span: Span::default() }
    }

    /// Right-nested sequence; an empty list is `skip`.
    pub fn seq(stmts: Vec<Stmt>) -> Stmt {
        let mut stmts: Vec<Stmt> = stmts.into_iter().flat_map(Stmt::into_flat).collect();
        let Some(mut acc) = stmts.pop() else {
            return Stmt::skip();
        };
        while let Some(s) = stmts.pop() {
            acc = Stmt::Seq(Box::new(s), Box::new(acc));
        }
        acc
    }

    fn into_flat(self) -> Vec<Stmt> {
        match self {
            Stmt::Seq(a, b) => {
                let mut v = a.into_flat();
                v.extend(b.into_flat());
                v
            }
            s => vec![s],
        }
    }

    /// The statement flattened out of nested `Seq`s.
    pub fn flatten(&self) -> Vec<&Stmt> {
        let mut out = Vec::new();
        fn go<'a>(s: &'a Stmt, out: &mut Vec<&'a Stmt>) {
            match s {
                Stmt::Seq(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                s => out.push(s),
            }
        }
        go(self, &mut out);
        out
    }

    pub fn span(&self) -> Span {
        match self {
            Stmt::Seq(a, _) => a.span(),
            Stmt::RootRead { span, .. }
            | Stmt::VarRead { span, .. }
            | Stmt::FieldRead { span, .. }
            | Stmt::FieldWrite { span, .. }
            | Stmt::Alloc { span, .. }
            | Stmt::Free { span, .. }
            | Stmt::SyncStart { span }
            | Stmt::SyncStop { span }
            | Stmt::Skip { span }
            | Stmt::IfBool { span, .. }
            | Stmt::IfFieldEq { span, .. }
            | Stmt::IfFieldNull { span, .. }
            | Stmt::WhileBool { span, .. }
            | Stmt::WhileFieldNonNull { span, .. }
            | Stmt::DataRead { span, .. }
            | Stmt::DataWrite { span, .. }
            | Stmt::BoolAssign { span, .. }
            | Stmt::DataSet { span, .. }
            | Stmt::Assert { span, .. } => *span,
        }
    }

    pub fn is_atomic(&self) -> bool {
        !matches!(
            self,
            Stmt::Seq(..)
                | Stmt::IfBool { .. }
                | Stmt::IfFieldEq { .. }
                | Stmt::IfFieldNull { .. }
                | Stmt::WhileBool { .. }
                | Stmt::WhileFieldNonNull { .. }
        )
    }

    /// Does the statement read or write the shared heap?
    pub fn touches_heap(&self) -> bool {
        let mut hit = false;
        self.walk(&mut |s| {
            hit |= matches!(
                s,
                Stmt::FieldRead { .. }
                    | Stmt::FieldWrite { .. }
                    | Stmt::IfFieldEq { .. }
                    | Stmt::IfFieldNull { .. }
                    | Stmt::WhileFieldNonNull { .. }
                    | Stmt::DataRead { .. }
                    | Stmt::DataWrite { .. }
            )
        });
        hit
    }

    /// Pre-order traversal.
    pub fn walk(&self, f: &mut dyn FnMut(&Stmt)) {
        f(self);
        match self {
            Stmt::Seq(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Stmt::IfBool { then, els, .. }
            | Stmt::IfFieldEq { then, els, .. }
            | Stmt::IfFieldNull { then, els, .. } => {
                then.walk(f);
                els.walk(f);
            }
            Stmt::WhileBool { body, .. } | Stmt::WhileFieldNonNull { body, .. } => body.walk(f),
            _ => {}
        }
    }

    /// Variables this node itself mentions (not its children).
    fn own_vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let op = |o: &Operand, out: &mut Vec<String>| {
            if let Operand::Var(v) = o {
                out.push(v.clone());
            }
        };
        match self {
            Stmt::RootRead { y: a, root: b, .. }
            | Stmt::VarRead { z: a, x: b, .. }
            | Stmt::FieldRead { z: a, x: b, .. }
            | Stmt::IfFieldEq { x: a, z: b, .. }
            | Stmt::DataRead { v: a, x: b, .. } => out.extend([a.clone(), b.clone()]),
            Stmt::FieldWrite { x, rhs, .. } => {
                out.push(x.clone());
                out.extend(rhs.clone());
            }
            Stmt::Alloc { x, .. }
            | Stmt::Free { x, .. }
            | Stmt::IfBool { b: x, .. }
            | Stmt::WhileBool { b: x, .. }
            | Stmt::IfFieldNull { x, .. }
            | Stmt::WhileFieldNonNull { x, .. } => out.push(x.clone()),
            Stmt::DataWrite { x, v, .. } => {
                out.push(x.clone());
                op(v, &mut out);
            }
            Stmt::BoolAssign { b, expr, .. } => {
                out.push(b.clone());
                match expr {
                    BoolExpr::Const(_) => {}
                    BoolExpr::Var(v) | BoolExpr::Not(v) => out.push(v.clone()),
                    BoolExpr::Cmp(_, a, c) => {
                        op(a, &mut out);
                        op(c, &mut out);
                    }
                }
            }
            Stmt::DataSet { v, value, .. } => {
                out.push(v.clone());
                op(value, &mut out);
            }
            _ => {}
        }
        out
    }

    /// Pointer-valued variables (heap references) mentioned anywhere.
    pub fn pointer_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |s| match s {
            Stmt::RootRead { y, .. } => {
                out.insert(y.clone());
            }
            Stmt::VarRead { z, x, .. } => {
                out.insert(z.clone());
                out.insert(x.clone());
            }
            Stmt::FieldRead { z, x, .. } => {
                out.insert(z.clone());
                out.insert(x.clone());
            }
            Stmt::FieldWrite { x, rhs, .. } => {
                out.insert(x.clone());
                out.extend(rhs.clone());
            }
            Stmt::Alloc { x, .. }
            | Stmt::Free { x, .. }
            | Stmt::IfFieldNull { x, .. }
            | Stmt::WhileFieldNonNull { x, .. }
            | Stmt::DataRead { x, .. }
            | Stmt::DataWrite { x, .. } => {
                out.insert(x.clone());
            }
            Stmt::IfFieldEq { x, z, .. } => {
                out.insert(x.clone());
                out.insert(z.clone());
            }
            _ => {}
        });
        out
    }

    pub fn bool_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |s| match s {
            Stmt::IfBool { b, .. } | Stmt::WhileBool { b, .. } => {
                out.insert(b.clone());
            }
            Stmt::BoolAssign { b, expr, .. } => {
                out.insert(b.clone());
                if let BoolExpr::Var(v) | BoolExpr::Not(v) = expr {
                    out.insert(v.clone());
                }
            }
            _ => {}
        });
        out
    }

    pub fn data_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let op = |o: &Operand, out: &mut BTreeSet<String>| {
            if let Operand::Var(v) = o {
                out.insert(v.clone());
            }
        };
        self.walk(&mut |s| match s {
            Stmt::DataRead { v, .. } => {
                out.insert(v.clone());
            }
            Stmt::DataWrite { v, .. } => op(v, &mut out),
            Stmt::DataSet { v, value, .. } => {
                out.insert(v.clone());
                op(value, &mut out);
            }
            Stmt::BoolAssign { expr: BoolExpr::Cmp(_, a, b), .. } => {
                op(a, &mut out);
                op(b, &mut out);
            }
            _ => {}
        });
        out
    }
}

/// FV(C): every variable read or written.
pub fn free_vars(stmt: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    stmt.walk(&mut |s| out.extend(s.own_vars()));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Read,
    Write,
}

/// `x.f as y` in a block header: `y` starts as an iterator at the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binder {
    pub root: String,
    pub field: Field,
    pub var: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub binder: Option<Binder>,
    pub body: Stmt,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadKind {
    Writer,
    Reader,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadDecl {
    pub name: String,
    pub kind: ThreadKind,
    /// Replication count (`reader r * 2`); always 1 for writers.
    pub count: usize,
    pub blocks: Vec<Block>,
    pub span: Span,
}

impl ThreadDecl {
    pub fn pointer_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for b in &self.blocks {
            out.extend(b.body.pointer_vars());
            if let Some(bd) = &b.binder {
                out.insert(bd.var.clone());
            }
        }
        out
    }

    pub fn bool_vars(&self) -> BTreeSet<String> {
        self.blocks.iter().flat_map(|b| b.body.bool_vars()).collect()
    }

    pub fn data_vars(&self) -> BTreeSet<String> {
        self.blocks.iter().flat_map(|b| b.body.data_vars()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub field_types: FieldTypeTable,
    pub root_var: String,
    pub threads: Vec<ThreadDecl>,
}

impl Program {
    pub fn writer(&self) -> Option<&ThreadDecl> {
        self.threads.iter().find(|t| t.kind == ThreadKind::Writer)
    }
}
