//! The RCU source language: AST, parser, and pretty-printer.
//!
//! ```text
//! fields { Next: rcu, data: normal }
//! root head;
//!
//! writer remove {
//!   rcu_write {
//!     par = head;
//!     cur = par.Next;
//!     ...
//!   }
//! }
//! reader member * 2 { rcu_read { ... } }
//! ```

mod ast;
mod lexer;
mod parser;
mod pretty;

use std::fmt;

use serde::Serialize;

pub use ast::*;
pub use pretty::pretty;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn at(span: Span, message: impl Into<String>) -> Self {
        ParseError { line: span.line, col: span.col, message: message.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject write-side loops that touch the heap but carry no
    /// `@invariant`.
    pub require_invariants: bool,
}

pub fn parse(src: &str) -> Result<Program, Vec<ParseError>> {
    parse_with(src, &ParseOptions::default())
}

pub fn parse_with(src: &str, opts: &ParseOptions) -> Result<Program, Vec<ParseError>> {
    parser::parse_program(src, opts).map_err(|e| vec![e])
}

#[cfg(test)]
mod tests {
    use super::*;

    const BAG: &str = "
        fields { Next: rcu, data: normal }
        root head;
        writer w {
          rcu_write {
            toDel = 2;
            par = head;
            cur = head;
            cur = par.Next;
            while (cur.Next != null && cur.data != toDel)
              @invariant{par: rcuItr Next^k {Next -> cur}, cur: rcuItr Next^k.Next}
              @reindex(k, Next) {
              par = cur;
              cur = par.Next;
            }
            curl = cur.Next;
            par.Next = curl;
            sync_start; sync_stop;
            free(cur);
          }
        }
        reader r * 2 { rcu_read { p = head; c = p.Next; v = c.data; } }
    ";

    #[test]
    fn parses_and_round_trips() {
        let p = parse(BAG).unwrap();
        assert_eq!(p.threads.len(), 2);
        assert_eq!(p.threads[1].count, 2);
        let text = pretty(&p);
        let q = parse(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(pretty(&q), text);
    }

    #[test]
    fn compound_guard_desugars() {
        let p = parse(BAG).unwrap();
        let body = &p.threads[0].blocks[0].body;
        let mut saw = false;
        body.walk(&mut |s| {
            if let Stmt::WhileBool { b, .. } = s {
                saw = b.starts_with("__go");
            }
        });
        assert!(saw);
    }

    #[test]
    fn skip_body() {
        let p = parse("fields { Next: rcu } root h; writer w { rcu_write { skip; } }").unwrap();
        assert!(matches!(p.threads[0].blocks[0].body, Stmt::Skip { .. }));
        assert_eq!(p.threads[0].blocks[0].body.to_string(), "skip");
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("fields { Next: rcu } root h;\nwriter w { rcu_write { x.Next = } }").unwrap_err();
        assert_eq!((e[0].line, e[0].col), (2, 33));
        let e = parse("fields { Next: rcu } root h; writer w { rcu_write { skip; }").unwrap_err();
        assert!(e[0].message.contains("unterminated"), "{}", e[0]);
        let e = parse("fields { Next: rcu } root h; writer w { rcu_write { frob x; } }").unwrap_err();
        assert!(e[0].message.contains("unknown keyword"), "{}", e[0]);
        let e = parse(
            "fields { Next: rcu } root h; reader a { rcu_read { skip; } } reader a { rcu_read { skip; } }",
        )
        .unwrap_err();
        assert!(e[0].message.contains("duplicate"), "{}", e[0]);
        let src = "fields { Next: rcu } root h; writer w { rcu_write { p = h; while (p.Next != null) { p = p.Next; } } }";
        assert!(parse(src).is_ok());
        let e = parse_with(src, &ParseOptions { require_invariants: true }).unwrap_err();
        assert!(e[0].message.contains("invariant"), "{}", e[0]);
    }

    #[test]
    fn free_vars_examples() {
        let s = Stmt::FieldRead { z: "cur".into(), x: "par".into(), f: "Next".into(), span: Span::default() };
        let fv = free_vars(&s);
        assert_eq!(fv, ["cur", "par"].iter().map(|s| s.to_string()).collect());
        assert!(free_vars(&Stmt::skip()).is_empty());
    }
}
