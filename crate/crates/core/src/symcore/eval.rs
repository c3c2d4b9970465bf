//! Numeric evaluation.
//!
//! Everything here walks the DAG with an explicit stack so evaluation depth
//! is bounded by heap, not by the thread stack.

use std::collections::HashMap;

use num_traits::ToPrimitive;

use super::expr::{BinaryOp, Expr, Node, Store, Symbol, UnaryOp, STORE};
use crate::error::Error;

#[inline]
pub(crate) fn apply_unary(op: UnaryOp, a: f64) -> f64 {
    match op {
        UnaryOp::Neg => -a,
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Tan => a.tan(),
        UnaryOp::Sqrt => a.sqrt(),
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => a.ln(),
    }
}

#[inline]
pub(crate) fn apply_binary(op: BinaryOp, a: f64, b: f64) -> f64 {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Pow => {
            if b.fract() == 0.0 && b.abs() <= 64.0 {
                a.powi(b as i32)
            } else {
                a.powf(b)
            }
        }
        BinaryOp::Atan2 => a.atan2(b),
    }
}

/// Nodes reachable from `roots` in dependency order (children first).
pub(crate) fn topo_order(store: &Store, roots: &[Expr]) -> Vec<Expr> {
    let mut seen = std::collections::HashSet::new();
    let mut order = Vec::new();
    let mut stack: Vec<(Expr, bool)> = roots.iter().rev().map(|&r| (r, false)).collect();
    while let Some((e, expanded)) = stack.pop() {
        if expanded {
            order.push(e);
            continue;
        }
        if !seen.insert(e) {
            continue;
        }
        stack.push((e, true));
        match *store.node(e) {
            Node::Unary(_, a) => stack.push((a, false)),
            Node::Binary(_, a, b) => {
                stack.push((b, false));
                stack.push((a, false));
            }
            _ => {}
        }
    }
    order
}

/// Evaluates `e` at a point.
///
/// Unbound variables are a model error; a non-finite value is a domain error
/// naming the innermost subexpression that first went non-finite.
pub fn evaluate(e: Expr, point: &HashMap<Symbol, f64>) -> Result<f64, Error> {
    let bad = {
        let store = STORE.read();
        let order = topo_order(&store, &[e]);
        let mut val: HashMap<Expr, f64> = HashMap::with_capacity(order.len());
        let mut bad = None;
        for n in order {
            let v = match store.node(n) {
                Node::Const(c) => c.to_f64().unwrap_or(f64::NAN),
                Node::Pi => std::f64::consts::PI,
                Node::Var(s) => *point
                    .get(s)
                    .ok_or_else(|| Error::Model(format!("no value for `{}`", store.symbol_name(*s))))?,
                Node::Unary(op, a) => apply_unary(*op, val[a]),
                Node::Binary(op, a, b) => apply_binary(*op, val[a], val[b]),
            };
            if !v.is_finite() && bad.is_none() {
                bad = Some(n);
            }
            val.insert(n, v);
        }
        match bad {
            None => return Ok(val[&e]),
            Some(n) => n,
        }
    };
    Err(Error::Domain(format!("`{bad}` is not finite at the given point")))
}

#[derive(Clone, Debug)]
enum Instr {
    Const(f64),
    Input(usize),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
}

/// A flat, compiled evaluator for a fixed set of root expressions over a
/// fixed ordered list of input variables.
#[derive(Clone, Debug)]
pub struct Tape {
    code: Vec<Instr>,
    outputs: Vec<usize>,
    inputs: usize,
}

impl Tape {
    pub fn new(roots: &[Expr], inputs: &[Symbol]) -> Result<Tape, Error> {
        let store = STORE.read();
        let order = topo_order(&store, roots);
        let mut slot: HashMap<Expr, usize> = HashMap::with_capacity(order.len());
        let mut code = Vec::with_capacity(order.len());
        for n in order {
            let ins = match store.node(n) {
                Node::Const(c) => Instr::Const(c.to_f64().unwrap_or(f64::NAN)),
                Node::Pi => Instr::Const(std::f64::consts::PI),
                Node::Var(s) => match inputs.iter().position(|x| x == s) {
                    Some(k) => Instr::Input(k),
                    None => {
                        return Err(Error::Model(format!(
                            "expression depends on unbound symbol `{}`",
                            store.symbol_name(*s)
                        )))
                    }
                },
                Node::Unary(op, a) => Instr::Unary(*op, slot[a]),
                Node::Binary(op, a, b) => Instr::Binary(*op, slot[a], slot[b]),
            };
            slot.insert(n, code.len());
            code.push(ins);
        }
        let outputs = roots.iter().map(|r| slot[r]).collect();
        Ok(Tape { code, outputs, inputs: inputs.len() })
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates all roots, writing into `out`. `scratch` is reused between
    /// calls to avoid allocation.
    pub fn eval_into(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        scratch.clear();
        scratch.reserve(self.code.len());
        for ins in &self.code {
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Input(k) => x[k],
                Instr::Unary(op, a) => apply_unary(op, scratch[a]),
                Instr::Binary(op, a, b) => apply_binary(op, scratch[a], scratch[b]),
            };
            scratch.push(v);
        }
        for (o, &s) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[s];
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, &mut scratch, &mut out);
        out
    }
}
