//! Static and dynamic checking of RCU (read-copy-update) client programs.
//!
//! The [`checker`] runs a flow-sensitive type system over programs written
//! in a small imperative language ([`lang`]); the [`machine`] executes the
//! same programs under an abstract RCU semantics, with the [`oracle`]
//! monitoring memory-safety invariants and the [`explorer`] enumerating
//! bounded interleavings.

pub mod annotate;
pub mod checker;
pub mod corpus;
pub mod explorer;
pub mod lang;
pub mod machine;
pub mod oracle;
pub mod paths;
pub mod typesys;

pub use checker::{check_program, CheckMode, CheckOptions, Diagnostic, ProgramReport};
pub use lang::{parse, pretty, Program};
