//! Lowering of structured statements to flat per-thread instruction lists.

use crate::lang::{Binder, Block, BlockKind, BoolExpr, Operand, Stmt};
use crate::paths::Field;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    ReadBegin(Option<Binder>),
    ReadEnd,
    WriteBegin(Option<Binder>),
    WriteEnd,
    RootRead { y: String },
    VarRead { z: String, x: String },
    FieldRead { z: String, x: String, f: Field },
    FieldWrite { x: String, f: Field, rhs: Option<String> },
    Alloc { x: String },
    Free { x: String },
    SyncStart,
    SyncStop,
    DataRead { v: String, x: String, f: Field },
    DataWrite { x: String, f: Field, v: Operand },
    BoolAssign { b: String, expr: BoolExpr },
    DataSet { v: String, value: Operand },
    /// Jump to `target` when `b` evaluates to `when`.
    BrBool { b: String, when: bool, target: usize },
    /// Jump when `(x.f == null) == when`.
    BrFieldNull { x: String, f: Field, when: bool, target: usize },
    /// Jump when `(x.f == z) == when`.
    BrFieldEq { x: String, f: Field, z: String, when: bool, target: usize },
    Jump(usize),
    Nop,
}

impl Instr {
    /// Touches only the executing thread's stack (and at most the immutable
    /// root pointer), so it commutes with every other thread's actions.
    pub fn is_local(&self) -> bool {
        matches!(
            self,
            Instr::RootRead { .. }
                | Instr::VarRead { .. }
                | Instr::BoolAssign { .. }
                | Instr::DataSet { .. }
                | Instr::BrBool { .. }
                | Instr::Jump(_)
                | Instr::Nop
        )
    }
}

pub fn compile_blocks(blocks: &[Block]) -> Vec<Instr> {
    let mut out = Vec::new();
    for b in blocks {
        match b.kind {
            BlockKind::Read => out.push(Instr::ReadBegin(b.binder.clone())),
            BlockKind::Write => out.push(Instr::WriteBegin(b.binder.clone())),
        }
        stmt(&b.body, &mut out);
        out.push(match b.kind {
            BlockKind::Read => Instr::ReadEnd,
            BlockKind::Write => Instr::WriteEnd,
        });
    }
    out
}

fn patch(out: &mut [Instr], at: usize, to: usize) {
    match &mut out[at] {
        Instr::BrBool { target, .. }
        | Instr::BrFieldNull { target, .. }
        | Instr::BrFieldEq { target, .. }
        | Instr::Jump(target) => *target = to,
        i => unreachable!("patching {i:?}"),
    }
}

fn branches(out: &mut Vec<Instr>, test: Instr, then: &Stmt, els: &Stmt) {
    let br = out.len();
    out.push(test);
    stmt(then, out);
    let jump = out.len();
    out.push(Instr::Jump(usize::MAX));
    let else_start = out.len();
    patch(out, br, else_start);
    stmt(els, out);
    let end = out.len();
    patch(out, jump, end);
}

fn looped(out: &mut Vec<Instr>, test: Instr, body: &Stmt) {
    let head = out.len();
    out.push(test);
    stmt(body, out);
    out.push(Instr::Jump(head));
    let end = out.len();
    patch(out, head, end);
}

fn stmt(s: &Stmt, out: &mut Vec<Instr>) {
    let t = usize::MAX;
    match s {
        Stmt::Seq(a, b) => {
            stmt(a, out);
            stmt(b, out);
        }
        Stmt::RootRead { y, .. } => out.push(Instr::RootRead { y: y.clone() }),
        Stmt::VarRead { z, x, .. } => out.push(Instr::VarRead { z: z.clone(), x: x.clone() }),
        Stmt::FieldRead { z, x, f, .. } => out.push(Instr::FieldRead { z: z.clone(), x: x.clone(), f: f.clone() }),
        Stmt::FieldWrite { x, f, rhs, .. } => {
            out.push(Instr::FieldWrite { x: x.clone(), f: f.clone(), rhs: rhs.clone() })
        }
        Stmt::Alloc { x, .. } => out.push(Instr::Alloc { x: x.clone() }),
        Stmt::Free { x, .. } => out.push(Instr::Free { x: x.clone() }),
        Stmt::SyncStart { .. } => out.push(Instr::SyncStart),
        Stmt::SyncStop { .. } => out.push(Instr::SyncStop),
        Stmt::Skip { .. } | Stmt::Assert { .. } => out.push(Instr::Nop),
        Stmt::DataRead { v, x, f, .. } => out.push(Instr::DataRead { v: v.clone(), x: x.clone(), f: f.clone() }),
        Stmt::DataWrite { x, f, v, .. } => out.push(Instr::DataWrite { x: x.clone(), f: f.clone(), v: v.clone() }),
        Stmt::BoolAssign { b, expr, .. } => out.push(Instr::BoolAssign { b: b.clone(), expr: expr.clone() }),
        Stmt::DataSet { v, value, .. } => out.push(Instr::DataSet { v: v.clone(), value: value.clone() }),
        Stmt::IfBool { b, then, els, .. } => {
            branches(out, Instr::BrBool { b: b.clone(), when: false, target: t }, then, els)
        }
        Stmt::IfFieldEq { x, f, z, then, els, .. } => branches(
            out,
            Instr::BrFieldEq { x: x.clone(), f: f.clone(), z: z.clone(), when: false, target: t },
            then,
            els,
        ),
        Stmt::IfFieldNull { x, f, then, els, .. } => {
            branches(out, Instr::BrFieldNull { x: x.clone(), f: f.clone(), when: false, target: t }, then, els)
        }
        Stmt::WhileBool { b, body, .. } => looped(out, Instr::BrBool { b: b.clone(), when: false, target: t }, body),
        Stmt::WhileFieldNonNull { x, f, body, .. } => {
            looped(out, Instr::BrFieldNull { x: x.clone(), f: f.clone(), when: true, target: t }, body)
        }
    }
}
