//! Probabilistic zero and rank tests by evaluation at seeded random points.
//!
//! Sample point number `a` assigns every symbol a value drawn from
//! `±[lo, hi]` by a generator keyed on (seed, a, symbol name), so a symbol
//! takes the same value at point `a` no matter which query asks for it.
//! Node values are cached per point, keyed by interned node id.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{apply_binary, apply_unary};
use super::expr::{Expr, Node, Store, Symbol, STORE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub samples: usize,
    pub zero_tol: f64,
    pub sv_tol: f64,
    pub seed: u64,
    pub box_lo: f64,
    pub box_hi: f64,
    pub max_resamples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            samples: 5,
            zero_tol: 1e-9,
            sv_tol: 1e-10,
            seed: 0x5eed,
            box_lo: 0.3,
            box_hi: 1.7,
            max_resamples: 20,
        }
    }
}

impl OracleConfig {
    pub fn with_seed(seed: u64) -> Self {
        OracleConfig { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.samples >= 1
            && self.zero_tol > 0.0
            && self.sv_tol > 0.0
            && self.box_lo > 0.0
            && self.box_hi > self.box_lo
            && self.max_resamples >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Model(format!("invalid oracle configuration {self:?}")))
        }
    }
}

/// Usage counters, reported alongside results.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleStats {
    pub zero_queries: usize,
    pub rank_queries: usize,
    pub rejected_points: usize,
    /// Indices of every sample point that took part in some decision.
    pub points_used: BTreeSet<usize>,
    /// Rank queries whose numerical rank differed between sample points.
    pub unstable_ranks: usize,
}

const PAGE_BITS: u32 = 12;

/// `(value, magnitude)` per node id, allocated in pages on first touch so
/// that a fresh oracle costs nothing however large the node store is.
/// `(value, magnitude)` slots for one block of node ids.
type Page = Box<[Option<(f64, f64)>]>;

/// Point index with `(value, magnitude)` per root.
type Sample = (usize, Vec<(f64, f64)>);

#[derive(Default)]
struct PointCache {
    sym: HashMap<Symbol, f64>,
    pages: Vec<Option<Page>>,
}

impl PointCache {
    fn get(&self, i: usize) -> Option<(f64, f64)> {
        self.pages.get(i >> PAGE_BITS)?.as_ref()?[i & ((1 << PAGE_BITS) - 1)]
    }

    fn set(&mut self, i: usize, v: (f64, f64)) {
        let p = i >> PAGE_BITS;
        if self.pages.len() <= p {
            self.pages.resize_with(p + 1, || None);
        }
        let page = self.pages[p].get_or_insert_with(|| vec![None; 1 << PAGE_BITS].into_boxed_slice());
        page[i & ((1 << PAGE_BITS) - 1)] = Some(v);
    }
}

pub struct Oracle {
    cfg: OracleConfig,
    points: RefCell<Vec<PointCache>>,
    stats: RefCell<OracleStats>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Oracle {
        Oracle { cfg, points: RefCell::new(Vec::new()), stats: RefCell::new(OracleStats::default()) }
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn stats(&self) -> OracleStats {
        self.stats.borrow().clone()
    }

    /// Value assigned to `name` at sample point `attempt`.
    pub fn symbol_value(&self, name: &str, attempt: usize) -> f64 {
        let key = splitmix(self.cfg.seed ^ splitmix(attempt as u64 ^ fnv1a(name).rotate_left(17)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let m = rng.random_range(self.cfg.box_lo..self.cfg.box_hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    }

    /// Evaluates every root at point `a`, filling the cache; returns
    /// `(value, magnitude)` per root where magnitude is the largest absolute
    /// intermediate value in the root's DAG.
    fn eval_at(&self, store: &Store, a: usize, roots: &[Expr]) -> Vec<(f64, f64)> {
        let mut points = self.points.borrow_mut();
        while points.len() <= a {
            points.push(PointCache::default());
        }
        let pc = &mut points[a];
        let mut stack: Vec<(Expr, bool)> = Vec::new();
        for &r in roots {
            if pc.get(r.0 as usize).is_some() {
                continue;
            }
            stack.push((r, false));
            while let Some((e, expanded)) = stack.pop() {
                let i = e.0 as usize;
                if pc.get(i).is_some() {
                    continue;
                }
                let node = store.node(e);
                if !expanded {
                    stack.push((e, true));
                    match *node {
                        Node::Unary(_, x) => stack.push((x, false)),
                        Node::Binary(_, x, y) => {
                            stack.push((x, false));
                            stack.push((y, false));
                        }
                        _ => {}
                    }
                    continue;
                }
                let known = |pc: &PointCache, x: &Expr| pc.get(x.0 as usize).expect("children are evaluated first");
                let (v, m) = match node {
                    Node::Const(c) => {
                        let v = c.to_f64().unwrap_or(f64::NAN);
                        (v, v.abs())
                    }
                    Node::Pi => (std::f64::consts::PI, std::f64::consts::PI),
                    Node::Var(s) => {
                        let v = match pc.sym.get(s) {
                            Some(&v) => v,
                            None => {
                                let v = self.symbol_value(store.symbol_name(*s), a);
                                pc.sym.insert(*s, v);
                                v
                            }
                        };
                        (v, v.abs())
                    }
                    Node::Unary(op, x) => {
                        let (xv, xm) = known(pc, x);
                        let v = apply_unary(*op, xv);
                        (v, v.abs().max(xm))
                    }
                    Node::Binary(op, x, y) => {
                        let ((xv, xm), (yv, ym)) = (known(pc, x), known(pc, y));
                        let v = apply_binary(*op, xv, yv);
                        (v, v.abs().max(xm).max(ym))
                    }
                };
                pc.set(i, (v, m));
            }
        }
        roots.iter().map(|r| pc.get(r.0 as usize).expect("roots are evaluated")).collect()
    }

    /// Evaluates `roots` at `samples` admissible points (all values finite).
    /// Returns the point indices with `(value, magnitude)` per root.
    fn sample(&self, roots: &[Expr]) -> Result<Vec<Sample>> {
        let store = STORE.read();
        let mut out = Vec::with_capacity(self.cfg.samples);
        let mut rejected = 0;
        let mut a = 0;
        while out.len() < self.cfg.samples {
            let vals = self.eval_at(&store, a, roots);
            if vals.iter().all(|(v, m)| v.is_finite() && m.is_finite()) {
                out.push((a, vals));
            } else {
                rejected += 1;
                self.stats.borrow_mut().rejected_points += 1;
                if rejected > self.cfg.max_resamples {
                    return Err(Error::OracleExhausted { needed: self.cfg.samples, rejected });
                }
            }
            a += 1;
        }
        let mut st = self.stats.borrow_mut();
        st.points_used.extend(out.iter().map(|(a, _)| *a));
        Ok(out)
    }

    /// Numeric values of `roots` at each admissible sample point, with
    /// entries below the zero tolerance flushed to exactly zero.
    pub fn values(&self, roots: &[Expr]) -> Result<Vec<Vec<f64>>> {
        let tol = self.cfg.zero_tol;
        Ok(self
            .sample(roots)?
            .into_iter()
            .map(|(_, vs)| vs.into_iter().map(|(v, m)| if v.abs() <= tol * m.max(1.0) { 0.0 } else { v }).collect())
            .collect())
    }

    pub fn is_zero(&self, e: Expr) -> Result<bool> {
        if e.is_zero() {
            return Ok(true);
        }
        if matches!(e.node(), Node::Const(_) | Node::Pi) {
            return Ok(false);
        }
        self.stats.borrow_mut().zero_queries += 1;
        let tol = self.cfg.zero_tol;
        Ok(self.sample(&[e])?.iter().all(|(_, vs)| vs[0].0.abs() <= tol * vs[0].1.max(1.0)))
    }

    /// Generic rank of a matrix of expressions: the largest numerical rank
    /// over the sample points.
    pub fn rank(&self, rows: &[Vec<Expr>]) -> Result<usize> {
        Ok(self.rank_range(rows)?.1)
    }

    /// `(min, max)` numerical rank over the sample points.
    pub fn rank_range(&self, rows: &[Vec<Expr>]) -> Result<(usize, usize)> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if nr == 0 || nc == 0 {
            return Ok((0, 0));
        }
        if rows.iter().all(|r| r.iter().all(Expr::is_zero)) {
            return Ok((0, 0));
        }
        self.stats.borrow_mut().rank_queries += 1;
        let flat: Vec<Expr> = rows.iter().flatten().copied().collect();
        let mats = self.values(&flat)?;
        let (mut lo, mut hi) = (usize::MAX, 0);
        for vals in mats {
            let mut m = DMatrix::from_row_slice(nr, nc, &vals);
            for mut row in m.row_iter_mut() {
                let norm = row.norm();
                if norm > 0.0 {
                    row /= norm;
                }
            }
            let k = numeric_rank(&m, self.cfg.sv_tol);
            lo = lo.min(k);
            hi = hi.max(k);
        }
        if lo != hi {
            self.stats.borrow_mut().unstable_ranks += 1;
        }
        Ok((lo, hi))
    }
}

/// Count of singular values above `tol · σ_max · max(rows, cols)`.
pub fn numeric_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let cut = tol * smax * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > cut).count()
}
