//! Rational normal form used to present results.
//!
//! Non-polynomial subterms (variables, `sin`, `cos`, `sqrt`, `atan2`, ...)
//! become atoms. Numerators are expanded polynomials over the atoms with
//! `cos(u)^2` rewritten as `1 - sin(u)^2`, and denominators are products of
//! primitive polynomial factors that are cancelled by exact division
//! whenever possible. Anything too large is left untouched.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::eval::topo_order;
use super::expr::{BinaryOp, Expr, Node, UnaryOp, STORE};
use super::oracle::Oracle;
use crate::error::Result;

const TERM_LIMIT: usize = 3000;

type Mono = Vec<(u32, u32)>;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct Poly(BTreeMap<Mono, BigRational>);

#[derive(Clone, Debug)]
struct Rat {
    num: Poly,
    /// Denominator as powers of registered factors.
    den: BTreeMap<usize, u32>,
}

struct TooBig;

fn mono_mul(a: &Mono, b: &Mono) -> Mono {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push(b[j]);
            j += 1;
        } else {
            out.push((a[i].0, a[i].1 + b[j].1));
            i += 1;
            j += 1;
        }
    }
    out
}

/// `a / b` when `b` divides `a`.
fn mono_div(a: &Mono, b: &Mono) -> Option<Mono> {
    let mut out = Vec::new();
    let mut j = 0;
    for &(x, e) in a {
        if j < b.len() && b[j].0 < x {
            return None;
        }
        if j < b.len() && b[j].0 == x {
            match e.cmp(&b[j].1) {
                Ordering::Less => return None,
                Ordering::Equal => {}
                Ordering::Greater => out.push((x, e - b[j].1)),
            }
            j += 1;
        } else {
            out.push((x, e));
        }
    }
    (j == b.len()).then_some(out)
}

fn degree(m: &Mono) -> u32 {
    m.iter().map(|p| p.1).sum()
}

/// Graded lexicographic order.
fn mono_cmp(a: &Mono, b: &Mono) -> Ordering {
    degree(a).cmp(&degree(b)).then_with(|| {
        let (mut i, mut j) = (0, 0);
        loop {
            match (a.get(i), b.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&(x, ex)), Some(&(y, ey))) => {
                    if x != y {
                        return if x < y { Ordering::Greater } else { Ordering::Less };
                    }
                    if ex != ey {
                        return ex.cmp(&ey);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    })
}

impl Poly {
    fn constant(c: BigRational) -> Poly {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(Vec::new(), c);
        }
        Poly(m)
    }

    fn atom(a: u32) -> Poly {
        Poly(BTreeMap::from([(vec![(a, 1)], BigRational::one())]))
    }

    fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    fn add_term(&mut self, m: Mono, c: BigRational) {
        use std::collections::btree_map::Entry;
        match self.0.entry(m) {
            Entry::Vacant(v) => {
                if !c.is_zero() {
                    v.insert(c);
                }
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &o.0 {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::default();
        }
        Poly(self.0.iter().map(|(m, x)| (m.clone(), x * c)).collect())
    }

    fn mul(&self, o: &Poly) -> std::result::Result<Poly, TooBig> {
        if self.0.len() * o.0.len() > TERM_LIMIT * 8 {
            return Err(TooBig);
        }
        let mut out = Poly::default();
        for (ma, ca) in &self.0 {
            for (mb, cb) in &o.0 {
                out.add_term(mono_mul(ma, mb), ca * cb);
            }
        }
        if out.0.len() > TERM_LIMIT {
            return Err(TooBig);
        }
        Ok(out)
    }

    fn leading(&self) -> Option<(&Mono, &BigRational)> {
        self.0.iter().max_by(|a, b| mono_cmp(a.0, b.0))
    }

    /// Exact quotient `self / d`, if `d` divides `self`.
    fn exact_div(&self, d: &Poly) -> Option<Poly> {
        let (ld, cd) = d.leading()?;
        let (ld, cd) = (ld.clone(), cd.clone());
        let mut r = self.clone();
        let mut q = Poly::default();
        let mut steps = 0;
        while let Some((lr, cr)) = r.leading() {
            steps += 1;
            if steps > TERM_LIMIT {
                return None;
            }
            let t = mono_div(lr, &ld)?;
            let c = cr / &cd;
            for (m, x) in &d.0 {
                r.add_term(mono_mul(m, &t), -(x * &c));
            }
            q.add_term(t, c);
        }
        Some(q)
    }

    /// Rational content and monomial gcd, leaving a primitive polynomial
    /// with positive leading coefficient.
    fn split_content(&self) -> (BigRational, Mono, Poly) {
        let mut num_gcd = BigInt::zero();
        let mut den_lcm = BigInt::one();
        for c in self.0.values() {
            num_gcd = num_gcd.gcd(c.numer());
            den_lcm = den_lcm.lcm(c.denom());
        }
        let mut content = BigRational::new(num_gcd, den_lcm);
        if self.leading().is_some_and(|(_, c)| c.is_negative()) {
            content = -content;
        }
        let mut mono: Option<Mono> = None;
        for m in self.0.keys() {
            mono = Some(match mono {
                None => m.clone(),
                Some(g) => g
                    .iter()
                    .filter_map(|&(x, e)| m.iter().find(|p| p.0 == x).map(|p| (x, e.min(p.1))))
                    .collect(),
            });
        }
        let mono = mono.unwrap_or_default();
        let prim = Poly(
            self.0.iter().map(|(m, c)| (mono_div(m, &mono).expect("gcd divides"), c / &content)).collect(),
        );
        (content, mono, prim)
    }
}

struct Simplifier {
    expand_trig: bool,
    atoms: Vec<Expr>,
    atom_index: HashMap<Expr, u32>,
    /// Atom index of `cos(u)` → atom index of `sin(u)`.
    cos_to_sin: HashMap<u32, u32>,
    factors: Vec<Poly>,
}

impl Simplifier {
    fn new(expand_trig: bool) -> Simplifier {
        Simplifier { expand_trig, atoms: Vec::new(), atom_index: HashMap::new(), cos_to_sin: HashMap::new(), factors: Vec::new() }
    }

    fn atom(&mut self, e: Expr) -> u32 {
        if let Some(&a) = self.atom_index.get(&e) {
            return a;
        }
        let a = self.atoms.len() as u32;
        self.atoms.push(e);
        self.atom_index.insert(e, a);
        a
    }

    fn factor(&mut self, p: Poly) -> usize {
        if let Some(k) = self.factors.iter().position(|f| *f == p) {
            return k;
        }
        self.factors.push(p);
        self.factors.len() - 1
    }

    fn konst(c: BigRational) -> Rat {
        Rat { num: Poly::constant(c), den: BTreeMap::new() }
    }

    fn from_poly(p: Poly) -> Rat {
        Rat { num: p, den: BTreeMap::new() }
    }

    /// Rewrites `cos(u)^k`, `k ≥ 2`, through `cos^2 = 1 - sin^2`.
    fn reduce_trig(&self, p: Poly) -> std::result::Result<Poly, TooBig> {
        if self.cos_to_sin.is_empty() {
            return Ok(p);
        }
        let mut out = Poly::default();
        let mut work: Vec<(Mono, BigRational)> = p.0.into_iter().collect();
        while let Some((m, c)) = work.pop() {
            let hit = m.iter().position(|(a, e)| *e >= 2 && self.cos_to_sin.contains_key(a));
            match hit {
                None => out.add_term(m, c),
                Some(i) => {
                    let (ca, e) = m[i];
                    let sa = self.cos_to_sin[&ca];
                    let mut rest = m.clone();
                    if e == 2 {
                        rest.remove(i);
                    } else {
                        rest[i].1 = e - 2;
                    }
                    work.push((rest.clone(), c.clone()));
                    work.push((mono_mul(&rest, &vec![(sa, 2)]), -c));
                }
            }
            if work.len() + out.0.len() > TERM_LIMIT {
                return Err(TooBig);
            }
        }
        Ok(out)
    }

    fn cancel(&self, mut r: Rat) -> Rat {
        let keys: Vec<usize> = r.den.keys().copied().collect();
        for k in keys {
            while r.den.get(&k).copied().unwrap_or(0) > 0 {
                match r.num.exact_div(&self.factors[k]) {
                    Some(q) => {
                        r.num = q;
                        let e = r.den.get_mut(&k).expect("present");
                        *e -= 1;
                        if *e == 0 {
                            r.den.remove(&k);
                        }
                    }
                    None => break,
                }
            }
        }
        if r.num.is_zero() {
            r.den.clear();
        }
        r
    }

    fn den_poly(&self, den: &BTreeMap<usize, u32>, skip: &BTreeMap<usize, u32>) -> std::result::Result<Poly, TooBig> {
        let mut p = Poly::constant(BigRational::one());
        for (&k, &e) in den {
            let have = skip.get(&k).copied().unwrap_or(0);
            for _ in have..e {
                p = p.mul(&self.factors[k])?;
            }
        }
        Ok(p)
    }

    fn add(&self, a: &Rat, b: &Rat) -> std::result::Result<Rat, TooBig> {
        if a.den == b.den {
            return Ok(self.cancel(Rat { num: a.num.add(&b.num), den: a.den.clone() }));
        }
        let mut den = a.den.clone();
        for (&k, &e) in &b.den {
            let x = den.entry(k).or_insert(0);
            *x = (*x).max(e);
        }
        let na = a.num.mul(&self.den_poly(&den, &a.den)?)?;
        let nb = b.num.mul(&self.den_poly(&den, &b.den)?)?;
        let num = self.reduce_trig(na.add(&nb))?;
        Ok(self.cancel(Rat { num, den }))
    }

    fn mul(&self, a: &Rat, b: &Rat) -> std::result::Result<Rat, TooBig> {
        let num = self.reduce_trig(a.num.mul(&b.num)?)?;
        let mut den = a.den.clone();
        for (&k, &e) in &b.den {
            *den.entry(k).or_insert(0) += e;
        }
        Ok(self.cancel(Rat { num, den }))
    }

    fn inv(&mut self, a: &Rat) -> Option<Rat> {
        if a.num.is_zero() {
            return None;
        }
        let (content, mono, prim) = a.num.split_content();
        let mut num = Poly::constant(BigRational::one() / content);
        for (&k, &e) in &a.den {
            for _ in 0..e {
                num = num.mul(&self.factors[k]).ok()?;
            }
        }
        let mut den = BTreeMap::new();
        for (x, e) in mono {
            let k = self.factor(Poly::atom(x));
            *den.entry(k).or_insert(0) += e;
        }
        if prim.0.len() > 1 || prim.0.keys().any(|m| !m.is_empty()) {
            let k = self.factor(prim);
            *den.entry(k).or_insert(0) += 1;
        }
        Some(self.cancel(Rat { num, den }))
    }

    fn poly_expr(&self, p: &Poly) -> Expr {
        let mut terms: Vec<(&Mono, &BigRational)> = p.0.iter().collect();
        terms.sort_by(|a, b| mono_cmp(b.0, a.0));
        let mut acc = Expr::zero();
        for (k, (m, c)) in terms.into_iter().enumerate() {
            let mut t = Expr::one();
            for &(a, e) in m {
                t = t * self.atoms[a as usize].powi(e as i64);
            }
            if k > 0 && c.is_negative() {
                acc = acc - Expr::rational(-c.clone()) * t;
            } else {
                acc = acc + Expr::rational(c.clone()) * t;
            }
        }
        acc
    }

    fn rat_expr(&self, r: &Rat) -> Expr {
        let num = self.poly_expr(&r.num);
        if r.den.is_empty() {
            return num;
        }
        let mut den = Expr::one();
        for (&k, &e) in &r.den {
            den = den * self.poly_expr(&self.factors[k]).powi(e as i64);
        }
        num / den
    }

    /// Normalizes a trigonometric argument's sign; returns the argument and
    /// whether it was negated.
    fn trig_arg(&self, r: &Rat) -> (Expr, bool) {
        let neg = r.num.leading().is_some_and(|(_, c)| c.is_negative());
        if neg {
            let flipped = Rat { num: r.num.scale(&-BigRational::one()), den: r.den.clone() };
            (self.rat_expr(&flipped), true)
        } else {
            (self.rat_expr(r), false)
        }
    }

    /// `Σ k_i a_i` with small integer `k_i` and atoms `a_i`.
    fn linear_angle(&self, r: &Rat) -> Option<Vec<(u32, i64)>> {
        if !r.den.is_empty() || r.num.is_zero() {
            return None;
        }
        let mut out = Vec::new();
        let mut total = 0;
        for (m, c) in &r.num.0 {
            if m.len() != 1 || m[0].1 != 1 || !c.is_integer() {
                return None;
            }
            let k = c.to_integer().to_i64()?;
            total += k.abs();
            out.push((m[0].0, k));
        }
        (total <= 6).then_some(out)
    }

    /// `(sin Σ k_i a_i, cos Σ k_i a_i)` through the addition formulas.
    fn expand_angle(&mut self, terms: &[(u32, i64)]) -> Option<(Rat, Rat)> {
        let mut sn = Self::konst(BigRational::zero());
        let mut cs = Self::konst(BigRational::one());
        for &(a, k) in terms {
            let x = self.atoms[a as usize];
            let s1 = self.atom(x.sin());
            let c1 = self.atom(x.cos());
            self.cos_to_sin.insert(c1, s1);
            let (s1, c1) = (Self::from_poly(Poly::atom(s1)), Self::from_poly(Poly::atom(c1)));
            let (mut sk, mut ck) = (Self::konst(BigRational::zero()), Self::konst(BigRational::one()));
            for _ in 0..k.abs() {
                let ns = self.add(&self.mul(&sk, &c1).ok()?, &self.mul(&ck, &s1).ok()?).ok()?;
                let sc = self.mul(&sk, &s1).ok()?;
                let nc = self.add(&self.mul(&ck, &c1).ok()?, &Rat { num: sc.num.scale(&-BigRational::one()), den: sc.den }).ok()?;
                sk = ns;
                ck = nc;
            }
            if k < 0 {
                sk = Rat { num: sk.num.scale(&-BigRational::one()), den: sk.den };
            }
            let ns = self.add(&self.mul(&sn, &ck).ok()?, &self.mul(&cs, &sk).ok()?).ok()?;
            let ss = self.mul(&sn, &sk).ok()?;
            let nc = self.add(&self.mul(&cs, &ck).ok()?, &Rat { num: ss.num.scale(&-BigRational::one()), den: ss.den }).ok()?;
            sn = ns;
            cs = nc;
        }
        Some((sn, cs))
    }

    fn run(&mut self, e: Expr) -> Option<Rat> {
        let (order, nodes): (Vec<Expr>, Vec<Node>) = {
            let store = STORE.read();
            let order = topo_order(&store, &[e]);
            let nodes = order.iter().map(|&n| store.node(n).clone()).collect();
            (order, nodes)
        };
        let mut val: HashMap<Expr, Rat> = HashMap::with_capacity(order.len());
        for (n, node) in order.iter().zip(nodes) {
            let r = match node {
                Node::Const(c) => Self::konst(*c),
                Node::Var(_) | Node::Pi => Self::from_poly(Poly::atom(self.atom(*n))),
                Node::Unary(op, a) => {
                    let ra = val[&a].clone();
                    match op {
                        UnaryOp::Neg => Rat { num: ra.num.scale(&-BigRational::one()), den: ra.den },
                        UnaryOp::Sin | UnaryOp::Cos | UnaryOp::Tan if self.expand_trig && self.linear_angle(&ra).is_some() => {
                            let (sn, cs) = self.expand_angle(&self.linear_angle(&ra).expect("checked"))?;
                            match op {
                                UnaryOp::Sin => sn,
                                UnaryOp::Cos => cs,
                                _ => {
                                    let ci = self.inv(&cs)?;
                                    self.mul(&sn, &ci).ok()?
                                }
                            }
                        }
                        UnaryOp::Sin | UnaryOp::Cos | UnaryOp::Tan => {
                            let (arg, neg) = self.trig_arg(&ra);
                            let s = self.atom(arg.sin());
                            let c = self.atom(arg.cos());
                            self.cos_to_sin.insert(c, s);
                            let sp = Poly::atom(s).scale(&if neg { -BigRational::one() } else { BigRational::one() });
                            match op {
                                UnaryOp::Sin => Self::from_poly(sp),
                                UnaryOp::Cos => Self::from_poly(Poly::atom(c)),
                                _ => {
                                    let ci = self.inv(&Self::from_poly(Poly::atom(c)))?;
                                    self.mul(&Self::from_poly(sp), &ci).ok()?
                                }
                            }
                        }
                        _ => {
                            let arg = self.rat_expr(&ra);
                            Self::from_poly(Poly::atom(self.atom(Expr::unary(op, arg))))
                        }
                    }
                }
                Node::Binary(op, a, b) => {
                    let (ra, rb) = (val[&a].clone(), val[&b].clone());
                    match op {
                        BinaryOp::Add => self.add(&ra, &rb).ok()?,
                        BinaryOp::Mul => self.mul(&ra, &rb).ok()?,
                        BinaryOp::Div => {
                            let ib = self.inv(&rb)?;
                            self.mul(&ra, &ib).ok()?
                        }
                        BinaryOp::Pow => {
                            let k = b.as_rational().filter(|k| k.is_integer()).and_then(|k| k.to_i64());
                            match k {
                                Some(k) if k.abs() <= 16 => {
                                    let base = if k < 0 { self.inv(&ra)? } else { ra };
                                    let mut acc = Self::konst(BigRational::one());
                                    for _ in 0..k.abs() {
                                        acc = self.mul(&acc, &base).ok()?;
                                    }
                                    acc
                                }
                                _ => {
                                    let (x, y) = (self.rat_expr(&ra), self.rat_expr(&rb));
                                    Self::from_poly(Poly::atom(self.atom(Expr::binary(op, x, y))))
                                }
                            }
                        }
                        BinaryOp::Atan2 => {
                            let (x, y) = (self.rat_expr(&ra), self.rat_expr(&rb));
                            Self::from_poly(Poly::atom(self.atom(x.atan2(y))))
                        }
                    }
                }
            };
            if r.num.0.len() > TERM_LIMIT {
                return None;
            }
            val.insert(*n, r);
        }
        val.remove(&e)
    }
}

/// Exact rational normal form of `e`, or `e` itself when the expansion
/// exceeds the internal size limit.
pub fn simplify(e: Expr) -> Expr {
    normal_form(e, false)
}

/// Like [`simplify`], with sines and cosines of integer combinations of
/// atoms expanded into sines and cosines of the atoms themselves.
pub fn simplify_trig(e: Expr) -> Expr {
    normal_form(e, true)
}

/// A small-denominator rational matching every sample value of `e`.
fn constant_guess(e: Expr, oracle: &Oracle) -> Result<Option<Expr>> {
    let vals = oracle.values(&[e])?;
    let Some(first) = vals.first().map(|v| v[0]) else {
        return Ok(None);
    };
    if vals.iter().any(|v| (v[0] - first).abs() > 1e-9 * first.abs().max(1.0)) {
        return Ok(None);
    }
    for den in 1..=64i64 {
        let num = (first * den as f64).round();
        if (num / den as f64 - first).abs() <= 1e-10 * first.abs().max(1.0) && num.abs() < 1e12 {
            return Ok(Some(Expr::ratio(num as i64, den)));
        }
    }
    Ok(None)
}

fn normal_form(e: Expr, expand_trig: bool) -> Expr {
    let mut s = Simplifier::new(expand_trig);
    match s.run(e) {
        Some(r) => s.rat_expr(&r),
        None => e,
    }
}

/// The shortest of `e` and its two normal forms, a normal form accepted only
/// when the oracle confirms it equals `e`.
pub fn tidy(e: Expr, oracle: &Oracle) -> Result<Expr> {
    if e.as_rational().is_some() {
        return Ok(e);
    }
    if let Some(c) = constant_guess(e, oracle)? {
        if oracle.is_zero(e - c)? {
            return Ok(c);
        }
    }
    let mut best = e;
    let mut best_len = e.to_string().len();
    for s in [simplify(e), simplify_trig(e)] {
        let len = s.to_string().len();
        if s != best && len < best_len && oracle.is_zero(e - s)? {
            best = s;
            best_len = len;
        }
    }
    Ok(best)
}
