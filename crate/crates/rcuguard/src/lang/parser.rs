use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::lexer::{lex, Tok};
use super::{ParseError, ParseOptions};
use crate::paths::{parse_field_set, IndexVar};
use crate::typesys::TypeEnv;

const KEYWORDS: [&str; 16] = [
    "if", "else", "while", "new", "null", "true", "false", "skip", "free", "Free", "sync_start",
    "sync_stop", "SyncStart", "SyncStop", "rcu_read", "rcu_write",
];

/// One conjunct of a guard.
#[derive(Clone, Debug)]
enum Atom {
    FieldNull { x: String, f: String, eq: bool },
    FieldEq { x: String, f: String, z: String, eq: bool },
    DataCmp { x: String, f: String, op: CmpOp, rhs: Operand },
    Cmp(CmpOp, Operand, Operand),
    BoolVar(String, bool),
    Const(bool),
}

enum RawOperand {
    Var(String),
    Field(String, String),
    Int(i64),
    Null,
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    fields: FieldTypeTable,
    root: Option<String>,
    fresh: usize,
    opts: ParseOptions,
}

type PResult<T> = Result<T, ParseError>;

pub fn parse_program(src: &str, opts: &ParseOptions) -> PResult<Program> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        fields: FieldTypeTable::default(),
        root: None,
        fresh: 0,
        opts: opts.clone(),
    };
    p.program()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::at(self.span(), msg))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<Span> {
        if self.is_sym(s) {
            Ok(self.bump().1)
        } else {
            self.err(format!("expected `{s}`, found {}", self.peek().describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", t.describe())),
        }
    }

    fn tmp(&mut self, prefix: &str) -> String {
        let n = self.fresh;
        self.fresh += 1;
        format!("__{prefix}{n}")
    }

    fn program(&mut self) -> PResult<Program> {
        loop {
            if self.is_kw("fields") {
                self.bump();
                self.expect_sym("{")?;
                while !self.is_sym("}") {
                    let span = self.span();
                    let f = self.ident()?;
                    self.expect_sym(":")?;
                    let kind = match self.ident()?.as_str() {
                        "rcu" => FieldKind::Rcu,
                        "normal" => FieldKind::Normal,
                        k => return Err(ParseError::at(span, format!("unknown field kind `{k}`"))),
                    };
                    if self.fields.fields.insert(f.clone(), kind).is_some() {
                        return Err(ParseError::at(span, format!("field `{f}` declared twice")));
                    }
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym("}")?;
            } else if self.is_kw("root") {
                let span = self.span();
                self.bump();
                let r = self.ident()?;
                if self.root.replace(r).is_some() {
                    return Err(ParseError::at(span, "root variable declared twice"));
                }
                self.eat_sym(";");
            } else {
                break;
            }
        }
        let root = match &self.root {
            Some(r) => r.clone(),
            None => return self.err("missing `root <name>;` declaration"),
        };
        let mut threads: Vec<ThreadDecl> = Vec::new();
        while *self.peek() != Tok::Eof {
            let t = self.thread()?;
            if threads.iter().any(|u| u.name == t.name) {
                return Err(ParseError::at(t.span, format!("duplicate thread name `{}`", t.name)));
            }
            if t.kind == ThreadKind::Writer && threads.iter().any(|u| u.kind == ThreadKind::Writer) {
                return Err(ParseError::at(t.span, "at most one writer thread is allowed"));
            }
            threads.push(t);
        }
        let mut prog = Program { field_types: self.fields.clone(), root_var: root, threads };
        for t in &mut prog.threads {
            for b in &mut t.blocks {
                resolve_copies(&mut b.body);
            }
        }
        validate(&prog, &self.opts)?;
        Ok(prog)
    }

    fn thread(&mut self) -> PResult<ThreadDecl> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::Ident(s) if s == "writer" => ThreadKind::Writer,
            Tok::Ident(s) if s == "reader" => ThreadKind::Reader,
            t => return self.err(format!("unknown keyword {}; expected `writer` or `reader`", t.describe())),
        };
        self.bump();
        let name = self.ident()?;
        let mut count = 1;
        if self.eat_sym("*") {
            if kind == ThreadKind::Writer {
                return self.err("writer threads cannot be replicated");
            }
            match self.bump() {
                (Tok::Int(n), _) if n >= 1 => count = n as usize,
                (_, sp) => return Err(ParseError::at(sp, "expected a positive replication count")),
            }
        }
        let open = self.expect_sym("{")?;
        let mut blocks = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return Err(ParseError::at(open, format!("unterminated block for thread `{name}`")));
            }
            blocks.push(self.block(kind)?);
        }
        self.bump();
        if blocks.is_empty() {
            return Err(ParseError::at(span, format!("thread `{name}` has no critical section")));
        }
        Ok(ThreadDecl { name, kind, count, blocks, span })
    }

    fn block(&mut self, thread: ThreadKind) -> PResult<Block> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::Ident(s) if s == "rcu_write" || s == "RCUWrite" => BlockKind::Write,
            Tok::Ident(s) if s == "rcu_read" || s == "RCURead" => BlockKind::Read,
            t => return self.err(format!("unknown keyword {}; expected `rcu_write` or `rcu_read`", t.describe())),
        };
        match (thread, kind) {
            (ThreadKind::Writer, BlockKind::Read) => {
                return self.err("writer threads contain only rcu_write blocks")
            }
            (ThreadKind::Reader, BlockKind::Write) => {
                return self.err("reader threads contain only rcu_read blocks")
            }
            _ => {}
        }
        self.bump();
        let binder = if let Tok::Ident(_) = self.peek() {
            let root = self.ident()?;
            self.expect_sym(".")?;
            let field = self.ident()?;
            if !self.is_kw("as") {
                return self.err("expected `as` in block header");
            }
            self.bump();
            let var = self.ident()?;
            Some(Binder { root, field, var })
        } else {
            None
        };
        let body = self.braced()?;
        Ok(Block { kind, binder, body, span })
    }

    fn braced(&mut self) -> PResult<Stmt> {
        let open = self.expect_sym("{")?;
        let mut stmts = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return Err(ParseError::at(open, "unterminated block"));
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(Stmt::seq(stmts))
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let tok = self.peek().clone();
        let simple = |p: &mut Parser, s: Stmt| -> PResult<Stmt> {
            p.bump();
            p.expect_sym(";")?;
            Ok(s)
        };
        match tok {
            Tok::Assert(label) => {
                self.bump();
                self.eat_sym(";");
                Ok(Stmt::Assert { label, span })
            }
            Tok::Ident(kw) => match kw.as_str() {
                "skip" => simple(self, Stmt::Skip { span }),
                "sync_start" | "SyncStart" => simple(self, Stmt::SyncStart { span }),
                "sync_stop" | "SyncStop" => simple(self, Stmt::SyncStop { span }),
                "free" | "Free" => {
                    self.bump();
                    self.expect_sym("(")?;
                    let x = self.ident()?;
                    self.expect_sym(")")?;
                    self.expect_sym(";")?;
                    Ok(Stmt::Free { x, span })
                }
                "if" => self.if_stmt(),
                "while" => self.while_stmt(),
                _ if KEYWORDS.contains(&kw.as_str()) => {
                    self.err(format!("unexpected keyword `{kw}`"))
                }
                _ => match self.peek_at(1) {
                    Tok::Sym("=") => self.assign(),
                    Tok::Sym(".") => self.field_assign(),
                    _ => self.err(format!("unknown keyword `{kw}`")),
                },
            },
            t => self.err(format!("expected a statement, found {}", t.describe())),
        }
    }

    fn field_kind(&self, f: &str, span: Span) -> PResult<FieldKind> {
        self.fields
            .kind(f)
            .ok_or_else(|| ParseError::at(span, format!("undeclared field `{f}`")))
    }

    fn assign(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let lhs = self.ident()?;
        if Some(&lhs) == self.root.as_ref() {
            return Err(ParseError::at(span, format!("root variable `{lhs}` cannot be assigned")));
        }
        self.expect_sym("=")?;
        if self.is_kw("new") {
            self.bump();
            self.expect_sym(";")?;
            return Ok(Stmt::Alloc { x: lhs, span });
        }
        // `z = x;` and `z = x.f;` are decided here; anything else is a
        // boolean or data expression.
        if let Tok::Ident(x) = self.peek().clone() {
            if !KEYWORDS.contains(&x.as_str()) {
                if matches!(self.peek_at(1), Tok::Sym(";")) {
                    self.bump();
                    self.bump();
                    if Some(&x) == self.root.as_ref() {
                        return Ok(Stmt::RootRead { y: lhs, root: x, span });
                    }
                    return Ok(Stmt::VarRead { z: lhs, x, span });
                }
                if matches!(self.peek_at(1), Tok::Sym(".")) && matches!(self.peek_at(3), Tok::Sym(";")) {
                    self.bump();
                    self.bump();
                    let fspan = self.span();
                    let f = self.ident()?;
                    self.bump();
                    return Ok(match self.field_kind(&f, fspan)? {
                        FieldKind::Rcu => Stmt::FieldRead { z: lhs, x, f, span },
                        FieldKind::Normal => Stmt::DataRead { v: lhs, x, f, span },
                    });
                }
            }
        }
        if let (Tok::Int(n), Tok::Sym(";")) = (self.peek().clone(), self.peek_at(1).clone()) {
            self.bump();
            self.bump();
            return Ok(Stmt::DataSet { v: lhs, value: Operand::Int(n), span });
        }
        if matches!(self.peek(), Tok::Sym(";")) {
            return self.err("expected an expression after `=`");
        }
        let atoms = self.cond()?;
        self.expect_sym(";")?;
        Ok(match atoms.as_slice() {
            [Atom::Cmp(op, a, b)] => {
                Stmt::BoolAssign { b: lhs, expr: BoolExpr::Cmp(*op, a.clone(), b.clone()), span }
            }
            [Atom::BoolVar(v, false)] => Stmt::BoolAssign { b: lhs, expr: BoolExpr::Not(v.clone()), span },
            [Atom::Const(c)] => Stmt::BoolAssign { b: lhs, expr: BoolExpr::Const(*c), span },
            _ => self.guard_code(&atoms, &lhs, span),
        })
    }

    fn field_assign(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let x = self.ident()?;
        self.expect_sym(".")?;
        let fspan = self.span();
        let f = self.ident()?;
        let kind = self.field_kind(&f, fspan)?;
        self.expect_sym("=")?;
        let rspan = self.span();
        let rhs = match self.bump().0 {
            Tok::Ident(s) if s == "null" => RawOperand::Null,
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => RawOperand::Var(s),
            Tok::Int(n) => RawOperand::Int(n),
            t => return Err(ParseError::at(rspan, format!("expected a value, found {}", t.describe()))),
        };
        self.expect_sym(";")?;
        match (kind, rhs) {
            (FieldKind::Rcu, RawOperand::Var(y)) => Ok(Stmt::FieldWrite { x, f, rhs: Some(y), span }),
            (FieldKind::Rcu, RawOperand::Null) => Ok(Stmt::FieldWrite { x, f, rhs: None, span }),
            (FieldKind::Normal, RawOperand::Var(v)) => Ok(Stmt::DataWrite { x, f, v: Operand::Var(v), span }),
            (FieldKind::Normal, RawOperand::Int(n)) => Ok(Stmt::DataWrite { x, f, v: Operand::Int(n), span }),
            (FieldKind::Rcu, _) => Err(ParseError::at(rspan, format!("rcu field `{f}` takes a variable or null"))),
            (FieldKind::Normal, _) => Err(ParseError::at(rspan, format!("data field `{f}` takes a variable or integer"))),
        }
    }

    fn operand(&mut self) -> PResult<RawOperand> {
        let span = self.span();
        match self.bump().0 {
            Tok::Int(n) => Ok(RawOperand::Int(n)),
            Tok::Ident(s) if s == "null" => Ok(RawOperand::Null),
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                if self.eat_sym(".") {
                    let f = self.ident()?;
                    Ok(RawOperand::Field(s, f))
                } else {
                    Ok(RawOperand::Var(s))
                }
            }
            t => Err(ParseError::at(span, format!("expected an operand, found {}", t.describe()))),
        }
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Sym("==") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return None,
        };
        self.bump();
        Some(op)
    }

    fn atom(&mut self) -> PResult<Atom> {
        let span = self.span();
        if self.eat_sym("!") {
            return Ok(Atom::BoolVar(self.ident()?, false));
        }
        if self.is_kw("true") || self.is_kw("false") {
            let b = self.is_kw("true");
            self.bump();
            return Ok(Atom::Const(b));
        }
        let lhs = self.operand()?;
        let Some(op) = self.cmp_op() else {
            return match lhs {
                RawOperand::Var(b) => Ok(Atom::BoolVar(b, true)),
                _ => Err(ParseError::at(span, "expected a comparison")),
            };
        };
        let rspan = self.span();
        let rhs = self.operand()?;
        let eq = match op {
            CmpOp::Eq => Some(true),
            CmpOp::Ne => Some(false),
            _ => None,
        };
        let data = |r: RawOperand| match r {
            RawOperand::Var(v) => Ok(Operand::Var(v)),
            RawOperand::Int(n) => Ok(Operand::Int(n)),
            _ => Err(ParseError::at(rspan, "data comparisons take variables or integers")),
        };
        match lhs {
            RawOperand::Field(x, f) => match (self.field_kind(&f, span)?, rhs, eq) {
                (FieldKind::Rcu, RawOperand::Null, Some(eq)) => Ok(Atom::FieldNull { x, f, eq }),
                (FieldKind::Rcu, RawOperand::Var(z), Some(eq)) => Ok(Atom::FieldEq { x, f, z, eq }),
                (FieldKind::Rcu, _, _) => {
                    Err(ParseError::at(span, "rcu fields compare only with == or != against a variable or null"))
                }
                (FieldKind::Normal, rhs, _) => Ok(Atom::DataCmp { x, f, op, rhs: data(rhs)? }),
            },
            RawOperand::Null => Err(ParseError::at(span, "`null` may only appear on the right")),
            lhs => Ok(Atom::Cmp(op, data(lhs)?, data(rhs)?)),
        }
    }

    fn cond(&mut self) -> PResult<Vec<Atom>> {
        let mut atoms = vec![self.atom()?];
        while self.eat_sym("&&") {
            atoms.push(self.atom()?);
        }
        if self.is_sym("||") {
            return self.err("`||` is not supported in guards");
        }
        Ok(atoms)
    }

    /// Straight-line code that leaves the conjunction's value in `g`.
    fn guard_code(&mut self, atoms: &[Atom], g: &str, span: Span) -> Stmt {
        let set = |v: bool| Stmt::BoolAssign { b: g.to_string(), expr: BoolExpr::Const(v), span };
        let Some((first, rest)) = atoms.split_first() else {
            return set(true);
        };
        let tail = |p: &mut Parser| p.guard_code(rest, g, span);
        let then_rest = |p: &mut Parser, head: Stmt| {
            if rest.is_empty() {
                head
            } else {
                let more = p.guard_code(rest, g, span);
                Stmt::seq(vec![
                    head,
                    Stmt::IfBool { b: g.to_string(), then: Box::new(more), els: Box::new(Stmt::Skip { span }), span },
                ])
            }
        };
        match first.clone() {
            Atom::FieldNull { x, f, eq } => {
                let (hit, miss) = (tail(self), set(false));
                let (then, els) = if eq { (hit, miss) } else { (miss, hit) };
                Stmt::IfFieldNull { x, f, then: Box::new(then), els: Box::new(els), span }
            }
            Atom::FieldEq { x, f, z, eq } => {
                let (hit, miss) = (tail(self), set(false));
                let (then, els) = if eq { (hit, miss) } else { (miss, hit) };
                Stmt::IfFieldEq { x, f, z, then: Box::new(then), els: Box::new(els), span }
            }
            Atom::DataCmp { x, f, op, rhs } => {
                let d = self.tmp("d");
                let read = Stmt::DataRead { v: d.clone(), x, f, span };
                let cmp = Stmt::BoolAssign { b: g.to_string(), expr: BoolExpr::Cmp(op, Operand::Var(d), rhs), span };
                let head = Stmt::seq(vec![read, cmp]);
                then_rest(self, head)
            }
            Atom::Cmp(op, a, b) => {
                let head = Stmt::BoolAssign { b: g.to_string(), expr: BoolExpr::Cmp(op, a, b), span };
                then_rest(self, head)
            }
            Atom::BoolVar(v, pos) => {
                let expr = if pos { BoolExpr::Var(v) } else { BoolExpr::Not(v) };
                then_rest(self, Stmt::BoolAssign { b: g.to_string(), expr, span })
            }
            Atom::Const(c) => then_rest(self, set(c)),
        }
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        self.bump();
        self.expect_sym("(")?;
        let atoms = self.cond()?;
        self.expect_sym(")")?;
        let then = self.braced()?;
        let els = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                self.if_stmt()?
            } else {
                self.braced()?
            }
        } else {
            Stmt::Skip { span }
        };
        let (then, els) = (Box::new(then), Box::new(els));
        Ok(match atoms.as_slice() {
            [Atom::FieldNull { x, f, eq: true }] => Stmt::IfFieldNull { x: x.clone(), f: f.clone(), then, els, span },
            [Atom::FieldNull { x, f, eq: false }] => {
                Stmt::IfFieldNull { x: x.clone(), f: f.clone(), then: els, els: then, span }
            }
            [Atom::FieldEq { x, f, z, eq: true }] => {
                Stmt::IfFieldEq { x: x.clone(), f: f.clone(), z: z.clone(), then, els, span }
            }
            [Atom::FieldEq { x, f, z, eq: false }] => {
                Stmt::IfFieldEq { x: x.clone(), f: f.clone(), z: z.clone(), then: els, els: then, span }
            }
            [Atom::BoolVar(b, true)] => Stmt::IfBool { b: b.clone(), then, els, span },
            [Atom::BoolVar(b, false)] => Stmt::IfBool { b: b.clone(), then: els, els: then, span },
            _ => {
                let c = self.tmp("c");
                let code = self.guard_code(&atoms, &c, span);
                Stmt::seq(vec![code, Stmt::IfBool { b: c, then, els, span }])
            }
        })
    }

    fn annotations(&mut self) -> PResult<Option<LoopAnnotation>> {
        let mut invariant = None;
        let mut reindex = Vec::new();
        while let Tok::Annot(name, body) = self.peek().clone() {
            let span = self.span();
            self.bump();
            match name.as_str() {
                "invariant" => {
                    body.parse::<TypeEnv>()
                        .map_err(|e| ParseError::at(span, format!("bad loop invariant: {e}")))?;
                    if invariant.replace(body.trim().to_string()).is_some() {
                        return Err(ParseError::at(span, "loop has two invariants"));
                    }
                }
                "reindex" => {
                    let (k, fs) = body
                        .split_once(',')
                        .ok_or_else(|| ParseError::at(span, "expected `@reindex(k, field)`"))?;
                    let fields = parse_field_set(fs)
                        .ok_or_else(|| ParseError::at(span, format!("bad field set `{}`", fs.trim())))?;
                    for f in &fields {
                        if !self.fields.is_rcu(f) {
                            return Err(ParseError::at(span, format!("`{f}` is not an rcu field")));
                        }
                    }
                    reindex.push((IndexVar::new(k.trim()), fields));
                }
                other => return Err(ParseError::at(span, format!("unknown annotation `@{other}`"))),
            }
        }
        match invariant {
            None if !reindex.is_empty() => self.err("`@reindex` without `@invariant`"),
            None => Ok(None),
            Some(inv) => {
                let env: TypeEnv = inv.parse().expect("checked above");
                let vars: BTreeSet<IndexVar> =
                    env.iterators().flat_map(|(_, p, _)| p.index_vars()).collect();
                if let Some((k, _)) = reindex.iter().find(|(k, _)| !vars.contains(k)) {
                    return self.err(format!("index `{k}` does not occur in the invariant"));
                }
                Ok(Some(LoopAnnotation { invariant: inv, reindex }))
            }
        }
    }

    fn while_stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        self.bump();
        self.expect_sym("(")?;
        let atoms = self.cond()?;
        self.expect_sym(")")?;
        let annot = self.annotations()?;
        let body = self.braced()?;
        Ok(match atoms.as_slice() {
            [Atom::FieldNull { x, f, eq: false }] => {
                Stmt::WhileFieldNonNull { x: x.clone(), f: f.clone(), body: Box::new(body), annot, span }
            }
            [Atom::BoolVar(b, true)] => Stmt::WhileBool { b: b.clone(), body: Box::new(body), annot, span },
            _ => {
                let g = self.tmp("go");
                let entry = self.guard_code(&atoms, &g, span);
                let again = self.guard_code(&atoms, &g, span);
                let body = Stmt::seq(vec![body, again]);
                Stmt::seq(vec![entry, Stmt::WhileBool { b: g, body: Box::new(body), annot, span }])
            }
        })
    }
}

/// `z = x` between data or boolean variables is not a heap-reference copy.
fn resolve_copies(body: &mut Stmt) {
    loop {
        let bools = body.bool_vars();
        let datas = body.data_vars();
        let mut changed = false;
        rewrite(body, &mut |s| {
            if let Stmt::VarRead { z, x, span } = s {
                let new = if datas.contains(z) || datas.contains(x) {
                    Stmt::DataSet { v: z.clone(), value: Operand::Var(x.clone()), span: *span }
                } else if bools.contains(z) || bools.contains(x) {
                    Stmt::BoolAssign { b: z.clone(), expr: BoolExpr::Var(x.clone()), span: *span }
                } else {
                    return;
                };
                *s = new;
                changed = true;
            }
        });
        if !changed {
            break;
        }
    }
}

fn rewrite(s: &mut Stmt, f: &mut dyn FnMut(&mut Stmt)) {
    f(s);
    match s {
        Stmt::Seq(a, b) => {
            rewrite(a, f);
            rewrite(b, f);
        }
        Stmt::IfBool { then, els, .. }
        | Stmt::IfFieldEq { then, els, .. }
        | Stmt::IfFieldNull { then, els, .. } => {
            rewrite(then, f);
            rewrite(els, f);
        }
        Stmt::WhileBool { body, .. } | Stmt::WhileFieldNonNull { body, .. } => rewrite(body, f),
        _ => {}
    }
}

fn validate(p: &Program, opts: &ParseOptions) -> PResult<()> {
    for t in &p.threads {
        let ptr = t.pointer_vars();
        let bools = t.bool_vars();
        let datas = t.data_vars();
        let mut classes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (set, name) in [(&ptr, "pointer"), (&bools, "boolean"), (&datas, "data")] {
            for v in set {
                classes.entry(v.as_str()).or_default().push(name);
            }
        }
        if let Some((v, cs)) = classes.iter().find(|(_, cs)| cs.len() > 1) {
            return Err(ParseError::at(
                t.span,
                format!("variable `{v}` in thread `{}` is used as both {} and {}", t.name, cs[0], cs[1]),
            ));
        }
        for b in &t.blocks {
            if let Some(bd) = &b.binder {
                if bd.root != p.root_var {
                    return Err(ParseError::at(b.span, format!("`{}` is not the root variable", bd.root)));
                }
                if !p.field_types.is_rcu(&bd.field) {
                    return Err(ParseError::at(b.span, format!("`{}` is not an rcu field", bd.field)));
                }
            }
            let mut err = None;
            b.body.walk(&mut |s| {
                if err.is_some() {
                    return;
                }
                match s {
                    Stmt::WhileBool { annot: None, body, span, .. }
                    | Stmt::WhileFieldNonNull { annot: None, body, span, .. }
                        if opts.require_invariants
                            && b.kind == BlockKind::Write
                            && (body.touches_heap() || matches!(s, Stmt::WhileFieldNonNull { .. })) =>
                    {
                        err = Some(ParseError::at(*span, "loop reading the heap needs an `@invariant`"));
                    }
                    Stmt::FieldRead { x, .. }
                    | Stmt::FieldWrite { x, .. }
                    | Stmt::DataRead { x, .. }
                    | Stmt::DataWrite { x, .. }
                    | Stmt::Free { x, .. }
                        if *x == p.root_var =>
                    {
                        err = Some(ParseError::at(
                            s.span(),
                            format!("root `{x}` must be read into a local first"),
                        ));
                    }
                    _ => {}
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    Ok(())
}
