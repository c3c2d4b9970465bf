//! Hash-consed expression DAG.
//!
//! Every node lives in one process-wide interner. Structurally identical
//! subtrees are stored once, so two `Expr` handles are structurally equal
//! exactly when their ids are equal. Constructors fold constants and
//! neutral elements; nothing heavier than that is attempted here.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use parking_lot::RwLock;

/// Handle to an interned expression node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(pub(crate) u32);

/// Handle to an interned variable name.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(pub(crate) u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Mul,
    Div,
    Pow,
    Atan2,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Const(Box<BigRational>),
    Var(Symbol),
    Pi,
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
}

pub(crate) struct Store {
    pub(crate) nodes: Vec<Node>,
    index: HashMap<Node, u32>,
    symbols: Vec<String>,
    symbol_index: HashMap<String, u32>,
    diff_cache: HashMap<(u32, u32), u32>,
}

pub(crate) static STORE: LazyLock<RwLock<Store>> = LazyLock::new(|| {
    let mut store = Store {
        nodes: Vec::new(),
        index: HashMap::new(),
        symbols: Vec::new(),
        symbol_index: HashMap::new(),
        diff_cache: HashMap::new(),
    };
    // ids 0 and 1 are always zero and one
    store.intern(Node::Const(Box::new(BigRational::zero())));
    store.intern(Node::Const(Box::new(BigRational::one())));
    RwLock::new(store)
});

const ZERO: Expr = Expr(0);
const ONE: Expr = Expr(1);

impl Store {
    fn intern(&mut self, node: Node) -> Expr {
        if let Some(&id) = self.index.get(&node) {
            return Expr(id);
        }
        let id = u32::try_from(self.nodes.len()).expect("expression store overflow");
        self.nodes.push(node.clone());
        self.index.insert(node, id);
        Expr(id)
    }

    pub(crate) fn node(&self, e: Expr) -> &Node {
        &self.nodes[e.0 as usize]
    }

    fn symbol(&mut self, name: &str) -> Symbol {
        if let Some(&id) = self.symbol_index.get(name) {
            return Symbol(id);
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(name.to_string());
        self.symbol_index.insert(name.to_string(), id);
        Symbol(id)
    }

    pub(crate) fn symbol_name(&self, s: Symbol) -> &str {
        &self.symbols[s.0 as usize]
    }

    fn as_const(&self, e: Expr) -> Option<&BigRational> {
        match self.node(e) {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn constant(&mut self, c: BigRational) -> Expr {
        if c.is_zero() {
            return ZERO;
        }
        if c.is_one() {
            return ONE;
        }
        self.intern(Node::Const(Box::new(c)))
    }

    fn var(&mut self, s: Symbol) -> Expr {
        self.intern(Node::Var(s))
    }

    pub(crate) fn neg(&mut self, a: Expr) -> Expr {
        if let Some(c) = self.as_const(a) {
            let c = -c.clone();
            return self.constant(c);
        }
        if let Node::Unary(UnaryOp::Neg, inner) = *self.node(a) {
            return inner;
        }
        self.intern(Node::Unary(UnaryOp::Neg, a))
    }

    fn is_neg_of(&self, a: Expr, b: Expr) -> bool {
        matches!(*self.node(a), Node::Unary(UnaryOp::Neg, x) if x == b)
            || matches!(*self.node(b), Node::Unary(UnaryOp::Neg, x) if x == a)
    }

    pub(crate) fn add(&mut self, a: Expr, b: Expr) -> Expr {
        if a == ZERO {
            return b;
        }
        if b == ZERO {
            return a;
        }
        if let (Some(x), Some(y)) = (self.as_const(a), self.as_const(b)) {
            let c = x + y;
            return self.constant(c);
        }
        if self.is_neg_of(a, b) {
            return ZERO;
        }
        self.intern(Node::Binary(BinaryOp::Add, a, b))
    }

    pub(crate) fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        if a == b {
            return ZERO;
        }
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub(crate) fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        if a == ZERO || b == ZERO {
            return ZERO;
        }
        if a == ONE {
            return b;
        }
        if b == ONE {
            return a;
        }
        match (self.as_const(a).cloned(), self.as_const(b).cloned()) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(x), None) => self.scale(x, b),
            (None, Some(y)) => self.scale(y, a),
            (None, None) => self.intern(Node::Binary(BinaryOp::Mul, a, b)),
        }
    }

    /// `c * e` with the constant kept on the left and merged into an existing
    /// leading constant factor.
    fn scale(&mut self, c: BigRational, e: Expr) -> Expr {
        if (-c.clone()).is_one() {
            return self.neg(e);
        }
        if let Node::Binary(BinaryOp::Mul, l, r) = *self.node(e) {
            if let Some(k) = self.as_const(l).cloned() {
                let merged = c * k;
                if merged.is_zero() {
                    return ZERO;
                }
                if merged.is_one() {
                    return r;
                }
                let lc = self.constant(merged);
                return self.intern(Node::Binary(BinaryOp::Mul, lc, r));
            }
        }
        let lc = self.constant(c);
        self.intern(Node::Binary(BinaryOp::Mul, lc, e))
    }

    pub(crate) fn div(&mut self, a: Expr, b: Expr) -> Expr {
        if b == ONE {
            return a;
        }
        match (self.as_const(a).cloned(), self.as_const(b).cloned()) {
            (_, Some(y)) if y.is_zero() => self.intern(Node::Binary(BinaryOp::Div, a, b)),
            (Some(x), Some(y)) => self.constant(x / y),
            (None, Some(y)) => self.scale(y.recip(), a),
            _ => {
                if a == ZERO {
                    return ZERO;
                }
                if a == b {
                    return ONE;
                }
                if self.is_neg_of(a, b) {
                    return self.constant(-BigRational::one());
                }
                self.intern(Node::Binary(BinaryOp::Div, a, b))
            }
        }
    }

    pub(crate) fn pow(&mut self, a: Expr, b: Expr) -> Expr {
        if b == ZERO {
            return ONE;
        }
        if b == ONE {
            return a;
        }
        if a == ONE {
            return ONE;
        }
        if let (Some(x), Some(y)) = (self.as_const(a).cloned(), self.as_const(b).cloned()) {
            if y.is_integer() {
                if let Some(k) = y.to_integer().to_i32() {
                    if k.unsigned_abs() <= 64 && !(x.is_zero() && k < 0) {
                        let mut acc = BigRational::one();
                        for _ in 0..k.unsigned_abs() {
                            acc *= &x;
                        }
                        if k < 0 {
                            acc = acc.recip();
                        }
                        return self.constant(acc);
                    }
                }
            }
        }
        if a == ZERO {
            if let Some(y) = self.as_const(b) {
                if y.is_positive() {
                    return ZERO;
                }
            }
        }
        self.intern(Node::Binary(BinaryOp::Pow, a, b))
    }

    pub(crate) fn atan2(&mut self, a: Expr, b: Expr) -> Expr {
        if a == ZERO {
            if let Some(y) = self.as_const(b) {
                if y.is_positive() {
                    return ZERO;
                }
            }
        }
        self.intern(Node::Binary(BinaryOp::Atan2, a, b))
    }

    pub(crate) fn unary(&mut self, op: UnaryOp, a: Expr) -> Expr {
        match op {
            UnaryOp::Neg => return self.neg(a),
            UnaryOp::Sin | UnaryOp::Tan | UnaryOp::Sqrt if a == ZERO => return ZERO,
            UnaryOp::Cos | UnaryOp::Exp if a == ZERO => return ONE,
            UnaryOp::Log if a == ONE => return ZERO,
            UnaryOp::Sqrt if a == ONE => return ONE,
            _ => {}
        }
        self.intern(Node::Unary(op, a))
    }

    pub(crate) fn binary(&mut self, op: BinaryOp, a: Expr, b: Expr) -> Expr {
        match op {
            BinaryOp::Add => self.add(a, b),
            BinaryOp::Mul => self.mul(a, b),
            BinaryOp::Div => self.div(a, b),
            BinaryOp::Pow => self.pow(a, b),
            BinaryOp::Atan2 => self.atan2(a, b),
        }
    }

    /// Exact partial derivative, memoised per (node, variable).
    pub(crate) fn diff(&mut self, root: Expr, v: Symbol) -> Expr {
        // iterative post-order so deep DAGs do not exhaust small thread stacks
        let mut stack = vec![(root, false)];
        while let Some((e, expanded)) = stack.pop() {
            if self.diff_cache.contains_key(&(e.0, v.0)) {
                continue;
            }
            let node = self.node(e).clone();
            if !expanded {
                stack.push((e, true));
                match node {
                    Node::Unary(_, a) => stack.push((a, false)),
                    Node::Binary(_, a, b) => {
                        stack.push((a, false));
                        stack.push((b, false));
                    }
                    _ => {}
                }
                continue;
            }
            let d = |s: &Store, x: Expr| Expr(s.diff_cache[&(x.0, v.0)]);
            let out = match node {
                Node::Const(_) | Node::Pi => ZERO,
                Node::Var(s) => {
                    if s == v {
                        ONE
                    } else {
                        ZERO
                    }
                }
                Node::Unary(op, a) => {
                    let da = d(self, a);
                    if da == ZERO {
                        ZERO
                    } else {
                        match op {
                            UnaryOp::Neg => self.neg(da),
                            UnaryOp::Sin => {
                                let c = self.unary(UnaryOp::Cos, a);
                                self.mul(c, da)
                            }
                            UnaryOp::Cos => {
                                let s = self.unary(UnaryOp::Sin, a);
                                let p = self.mul(s, da);
                                self.neg(p)
                            }
                            UnaryOp::Tan => {
                                let t = self.unary(UnaryOp::Tan, a);
                                let two = self.constant(BigRational::from_integer(2.into()));
                                let t2 = self.pow(t, two);
                                let s = self.add(ONE, t2);
                                self.mul(s, da)
                            }
                            UnaryOp::Sqrt => {
                                let r = self.unary(UnaryOp::Sqrt, a);
                                let two = self.constant(BigRational::from_integer(2.into()));
                                let den = self.mul(two, r);
                                self.div(da, den)
                            }
                            UnaryOp::Exp => self.mul(e, da),
                            UnaryOp::Log => self.div(da, a),
                        }
                    }
                }
                Node::Binary(op, a, b) => {
                    let da = d(self, a);
                    let db = d(self, b);
                    match op {
                        BinaryOp::Add => self.add(da, db),
                        BinaryOp::Mul => {
                            let l = self.mul(da, b);
                            let r = self.mul(a, db);
                            self.add(l, r)
                        }
                        BinaryOp::Div => {
                            if db == ZERO {
                                self.div(da, b)
                            } else {
                                let q = self.mul(e, db);
                                let num = self.sub(da, q);
                                self.div(num, b)
                            }
                        }
                        BinaryOp::Pow => {
                            if let Some(c) = self.as_const(b).cloned() {
                                let cm1 = self.constant(c.clone() - BigRational::one());
                                let p = self.pow(a, cm1);
                                let k = self.constant(c);
                                let kp = self.mul(k, p);
                                self.mul(kp, da)
                            } else {
                                // d(a^b) = a^b * (b' ln a + b a'/a)
                                let ln = self.unary(UnaryOp::Log, a);
                                let t1 = self.mul(db, ln);
                                let q = self.div(da, a);
                                let t2 = self.mul(b, q);
                                let s = self.add(t1, t2);
                                self.mul(e, s)
                            }
                        }
                        BinaryOp::Atan2 => {
                            if da == ZERO && db == ZERO {
                                ZERO
                            } else {
                                let two = self.constant(BigRational::from_integer(2.into()));
                                let a2 = self.pow(a, two);
                                let b2 = self.pow(b, two);
                                let den = self.add(a2, b2);
                                let l = self.mul(b, da);
                                let r = self.mul(a, db);
                                let num = self.sub(l, r);
                                self.div(num, den)
                            }
                        }
                    }
                }
            };
            self.diff_cache.insert((e.0, v.0), out.0);
        }
        Expr(self.diff_cache[&(root.0, v.0)])
    }
}

impl Symbol {
    pub fn new(name: &str) -> Symbol {
        if let Some(&id) = STORE.read().symbol_index.get(name) {
            return Symbol(id);
        }
        STORE.write().symbol(name)
    }

    pub fn name(&self) -> String {
        STORE.read().symbol_name(*self).to_string()
    }

    pub fn expr(&self) -> Expr {
        STORE.write().var(*self)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl Expr {
    pub fn zero() -> Expr {
        LazyLock::force(&STORE);
        ZERO
    }

    pub fn one() -> Expr {
        LazyLock::force(&STORE);
        ONE
    }

    pub fn int(v: i64) -> Expr {
        Expr::rational(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn rational(c: BigRational) -> Expr {
        STORE.write().constant(c)
    }

    pub fn ratio(num: i64, den: i64) -> Expr {
        Expr::rational(BigRational::new(num.into(), den.into()))
    }

    pub fn pi() -> Expr {
        STORE.write().intern(Node::Pi)
    }

    pub fn var(name: &str) -> Expr {
        Symbol::new(name).expr()
    }

    /// Interning id; equal ids mean structurally identical expressions.
    pub fn id(&self) -> u32 {
        self.0
    }

    pub fn node(&self) -> Node {
        STORE.read().node(*self).clone()
    }

    pub fn is_zero(&self) -> bool {
        *self == Expr::zero()
    }

    pub fn as_rational(&self) -> Option<BigRational> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        self.as_rational().and_then(|c| c.to_f64())
    }

    pub fn as_symbol(&self) -> Option<Symbol> {
        match self.node() {
            Node::Var(s) => Some(s),
            _ => None,
        }
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        STORE.write().unary(op, a)
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        STORE.write().binary(op, a, b)
    }

    pub fn sin(self) -> Expr {
        Expr::unary(UnaryOp::Sin, self)
    }
    pub fn cos(self) -> Expr {
        Expr::unary(UnaryOp::Cos, self)
    }
    pub fn tan(self) -> Expr {
        Expr::unary(UnaryOp::Tan, self)
    }
    pub fn sqrt(self) -> Expr {
        Expr::unary(UnaryOp::Sqrt, self)
    }
    pub fn exp(self) -> Expr {
        Expr::unary(UnaryOp::Exp, self)
    }
    pub fn ln(self) -> Expr {
        Expr::unary(UnaryOp::Log, self)
    }
    pub fn pow(self, e: Expr) -> Expr {
        Expr::binary(BinaryOp::Pow, self, e)
    }
    pub fn powi(self, k: i64) -> Expr {
        self.pow(Expr::int(k))
    }
    pub fn atan2(self, x: Expr) -> Expr {
        Expr::binary(BinaryOp::Atan2, self, x)
    }

    /// Exact partial derivative with respect to `v`.
    pub fn diff(&self, v: Symbol) -> Expr {
        STORE.write().diff(*self, v)
    }

    /// Free variables in first-visit order.
    pub fn free_symbols(&self) -> Vec<Symbol> {
        free_symbols(std::slice::from_ref(self))
    }

    pub fn depends_on(&self, v: Symbol) -> bool {
        !self.diff(v).is_zero() || self.free_symbols().contains(&v)
    }

    /// Number of distinct nodes reachable from this expression, stopping
    /// early once `cap` is exceeded.
    pub fn dag_size(&self, cap: usize) -> usize {
        let store = STORE.read();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![*self];
        while let Some(e) = stack.pop() {
            if !seen.insert(e) {
                continue;
            }
            if seen.len() > cap {
                break;
            }
            match *store.node(e) {
                Node::Unary(_, a) => stack.push(a),
                Node::Binary(_, a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                _ => {}
            }
        }
        seen.len()
    }

    /// Replace variables by expressions.
    pub fn substitute(&self, map: &HashMap<Symbol, Expr>) -> Expr {
        let mut store = STORE.write();
        let mut memo: HashMap<Expr, Expr> = HashMap::new();
        let mut stack = vec![(*self, false)];
        while let Some((e, expanded)) = stack.pop() {
            if memo.contains_key(&e) {
                continue;
            }
            let node = store.node(e).clone();
            if !expanded {
                stack.push((e, true));
                match node {
                    Node::Unary(_, a) => stack.push((a, false)),
                    Node::Binary(_, a, b) => {
                        stack.push((a, false));
                        stack.push((b, false));
                    }
                    _ => {}
                }
                continue;
            }
            let out = match node {
                Node::Const(_) | Node::Pi => e,
                Node::Var(s) => map.get(&s).copied().unwrap_or(e),
                Node::Unary(op, a) => store.unary(op, memo[&a]),
                Node::Binary(op, a, b) => store.binary(op, memo[&a], memo[&b]),
            };
            memo.insert(e, out);
        }
        memo[self]
    }
}

pub fn free_symbols(roots: &[Expr]) -> Vec<Symbol> {
    let store = STORE.read();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<Expr> = roots.iter().rev().copied().collect();
    while let Some(e) = stack.pop() {
        if !seen.insert(e) {
            continue;
        }
        match *store.node(e) {
            Node::Var(s) => {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
            Node::Unary(_, a) => stack.push(a),
            Node::Binary(_, a, b) => {
                stack.push(b);
                stack.push(a);
            }
            Node::Const(_) | Node::Pi => {}
        }
    }
    out
}

pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
    terms.into_iter().fold(Expr::zero(), |acc, t| acc + t)
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        STORE.write().add(self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        STORE.write().sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        STORE.write().mul(self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        STORE.write().div(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        STORE.write().neg(self)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let store = STORE.read();
        let mut out = String::new();
        super::print::write_expr(&store, *self, 0, &mut out);
        f.write_str(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_consing_shares_nodes() {
        let x = Expr::var("x");
        let y = Expr::var("y");
        let a = (x + y).sin() * x;
        let b = (x + y).sin() * x;
        assert_eq!(a, b);
        assert_eq!(a.id(), b.id());
        assert_ne!(x + y, y + x);
    }

    #[test]
    fn constant_folding_and_neutral_elements() {
        let x = Expr::var("x");
        assert_eq!(Expr::int(2) + Expr::int(3), Expr::int(5));
        assert_eq!(x + Expr::zero(), x);
        assert_eq!(x * Expr::one(), x);
        assert_eq!(x * Expr::zero(), Expr::zero());
        assert_eq!(x / Expr::one(), x);
        assert_eq!(x - x, Expr::zero());
        assert_eq!(-(-x), x);
        assert_eq!(Expr::int(2) / Expr::int(4), Expr::ratio(1, 2));
        assert_eq!(Expr::int(3).powi(2), Expr::int(9));
        assert_eq!(Expr::int(2) * (Expr::int(3) * x), Expr::int(6) * x);
    }

    #[test]
    fn derivative_basic_rules() {
        let x = Symbol::new("x");
        let th = Symbol::new("theta");
        assert_eq!(x.expr().diff(x), Expr::one());
        assert_eq!(th.expr().sin().diff(th), th.expr().cos());
        assert_eq!(th.expr().sin().diff(x), Expr::zero());
    }

    #[test]
    fn atan2_derivative_matches_bearing_gradient() {
        let xr = Symbol::new("x_R");
        let yr = Symbol::new("y_R");
        let h = yr.expr().atan2(xr.expr());
        let d = h.diff(xr);
        let expected = -yr.expr() / (yr.expr().powi(2) + xr.expr().powi(2));
        let pt: HashMap<Symbol, f64> = [(xr, 0.7), (yr, -1.3)].into_iter().collect();
        let a = crate::symcore::eval::evaluate(d, &pt).unwrap();
        let b = crate::symcore::eval::evaluate(expected, &pt).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}
