use num_traits::{One, Signed};

use super::expr::{BinaryOp, Expr, Node, Store, UnaryOp};

// binding strength of what gets printed; higher binds tighter
const P_ADD: u8 = 1;
const P_MUL: u8 = 2;
const P_NEG: u8 = 3;
const P_POW: u8 = 4;
const P_ATOM: u8 = 5;

fn const_prec(store: &Store, e: Expr) -> u8 {
    match store.node(e) {
        Node::Const(c) => {
            if !c.denom().is_one() {
                P_MUL
            } else if c.is_negative() {
                P_NEG
            } else {
                P_ATOM
            }
        }
        _ => unreachable!(),
    }
}

fn prec(store: &Store, e: Expr) -> u8 {
    match store.node(e) {
        Node::Const(_) => const_prec(store, e),
        Node::Var(_) | Node::Pi => P_ATOM,
        Node::Unary(UnaryOp::Neg, _) => P_NEG,
        Node::Unary(..) => P_ATOM,
        Node::Binary(BinaryOp::Add, ..) => P_ADD,
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => P_MUL,
        Node::Binary(BinaryOp::Pow, ..) => P_POW,
        Node::Binary(BinaryOp::Atan2, ..) => P_ATOM,
    }
}

fn unary_name(op: UnaryOp) -> &'static str {
    match op {
        UnaryOp::Neg => "-",
        UnaryOp::Sin => "sin",
        UnaryOp::Cos => "cos",
        UnaryOp::Tan => "tan",
        UnaryOp::Sqrt => "sqrt",
        UnaryOp::Exp => "exp",
        UnaryOp::Log => "log",
    }
}

/// Writes `e`, parenthesised if it binds looser than `min`.
///
/// The output re-parses to the identical interned node.
pub(crate) fn write_expr(store: &Store, e: Expr, min: u8, out: &mut String) {
    let p = prec(store, e);
    let paren = p < min;
    if paren {
        out.push('(');
    }
    match store.node(e) {
        Node::Const(c) => {
            out.push_str(&c.numer().to_string());
            if !c.denom().is_one() {
                out.push('/');
                out.push_str(&c.denom().to_string());
            }
        }
        Node::Var(s) => out.push_str(store.symbol_name(*s)),
        Node::Pi => out.push_str("pi"),
        Node::Unary(UnaryOp::Neg, a) => {
            out.push('-');
            write_expr(store, *a, P_POW, out);
        }
        Node::Unary(op, a) => {
            out.push_str(unary_name(*op));
            out.push('(');
            write_expr(store, *a, 0, out);
            out.push(')');
        }
        Node::Binary(BinaryOp::Add, a, b) => {
            write_expr(store, *a, P_ADD, out);
            match store.node(*b) {
                Node::Unary(UnaryOp::Neg, c) => {
                    out.push_str(" - ");
                    write_expr(store, *c, P_MUL, out);
                }
                Node::Const(c) if c.is_negative() && c.denom().is_one() => {
                    out.push_str(" - ");
                    out.push_str(&(-c.numer()).to_string());
                }
                _ => {
                    out.push_str(" + ");
                    write_expr(store, *b, P_MUL, out);
                }
            }
        }
        Node::Binary(op @ (BinaryOp::Mul | BinaryOp::Div), a, b) => {
            write_expr(store, *a, P_MUL, out);
            out.push_str(if *op == BinaryOp::Mul { "*" } else { "/" });
            write_expr(store, *b, P_NEG, out);
        }
        Node::Binary(BinaryOp::Pow, a, b) => {
            write_expr(store, *a, P_ATOM, out);
            out.push('^');
            write_expr(store, *b, P_NEG, out);
        }
        Node::Binary(BinaryOp::Atan2, a, b) => {
            out.push_str("atan2(");
            write_expr(store, *a, 0, out);
            out.push_str(", ");
            write_expr(store, *b, 0, out);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}
