//! Computer-algebra kernel: expressions, derivatives, evaluation and the
//! random-point oracles.

pub mod eval;
pub mod expr;
pub mod linalg;
pub mod oracle;
pub mod parse;
pub mod simplify;
mod print;

pub use eval::{evaluate, Tape};
pub use expr::{free_symbols, sum, BinaryOp, Expr, Node, Symbol, UnaryOp};
pub use linalg::SymMatrix;
pub use oracle::{Oracle, OracleConfig, OracleStats};
pub use parse::parse;
pub use simplify::{simplify, simplify_trig, tidy};
