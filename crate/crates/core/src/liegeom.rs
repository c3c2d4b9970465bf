//! Gradients, Lie derivatives and brackets, codistributions kept as lists of
//! scalar generator functions, and the closure operators built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcore::linalg::kernel;
use crate::symcore::{simplify, tidy, BinaryOp, Expr, Node, Oracle, OracleConfig, Symbol};
use crate::sysmodel::SystemModel;

pub type Field = Vec<Expr>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// Largest DAG (in distinct nodes) any single generated expression may have.
    pub node_budget: usize,
    /// Largest number of bracket-chain terms an enumeration may visit.
    pub term_budget: usize,
    /// Iteration cap for the outer solver loops; 0 means `10 · n`.
    pub max_iter: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { node_budget: 2_000_000, term_budget: 20_000, max_iter: 0 }
    }
}

/// Oracle plus resource limits, threaded through every analysis step.
pub struct Ctx {
    pub oracle: Oracle,
    pub limits: Limits,
}

impl Ctx {
    pub fn new(cfg: OracleConfig, limits: Limits) -> Ctx {
        Ctx { oracle: Oracle::new(cfg), limits }
    }

    pub fn check_size(&self, e: Expr, what: &str) -> Result<Expr> {
        let cap = self.limits.node_budget;
        if e.dag_size(cap) > cap {
            return Err(Error::Budget(format!("{what} exceeds {cap} expression nodes")));
        }
        Ok(e)
    }
}

impl Default for Ctx {
    fn default() -> Self {
        Ctx::new(OracleConfig::default(), Limits::default())
    }
}

pub fn gradient(h: Expr, coords: &[Symbol]) -> Vec<Expr> {
    coords.iter().map(|&x| h.diff(x)).collect()
}

pub fn jacobian(hs: &[Expr], coords: &[Symbol]) -> Vec<Vec<Expr>> {
    hs.iter().map(|&h| gradient(h, coords)).collect()
}

/// `∇h · f`.
pub fn lie_derivative(f: &[Expr], h: Expr, coords: &[Symbol]) -> Expr {
    let mut acc = Expr::zero();
    for (x, fi) in coords.iter().zip(f) {
        if fi.is_zero() {
            continue;
        }
        let d = h.diff(*x);
        if !d.is_zero() {
            acc = acc + d * *fi;
        }
    }
    acc
}

/// `(∂g/∂x) f − (∂f/∂x) g`.
pub fn lie_bracket(f: &[Expr], g: &[Expr], coords: &[Symbol]) -> Field {
    f.iter().zip(g).map(|(fk, gk)| lie_derivative(f, *gk, coords) - lie_derivative(g, *fk, coords)).collect()
}

pub fn is_zero_field(f: &[Expr]) -> bool {
    f.iter().all(Expr::is_zero)
}

pub fn scale_field(c: Expr, f: &[Expr]) -> Field {
    f.iter().map(|e| c * *e).collect()
}

pub fn add_fields(a: &[Expr], b: &[Expr]) -> Field {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

/// A Lie-derivative operator along a field, with the extra `∂/∂t` term for
/// time-variant systems when `time` is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LieOp {
    pub field: Field,
    pub time: Option<Symbol>,
}

impl LieOp {
    pub fn new(field: Field) -> LieOp {
        LieOp { field, time: None }
    }

    pub fn timed(field: Field, time: Option<Symbol>) -> LieOp {
        LieOp { field, time }
    }

    pub fn apply(&self, h: Expr, coords: &[Symbol]) -> Expr {
        let l = lie_derivative(&self.field, h, coords);
        match self.time {
            Some(t) => l + h.diff(t),
            None => l,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.time.is_none() && is_zero_field(&self.field)
    }
}

/// Span of the differentials of a list of scalar functions.
///
/// Generators are kept only when they raise the generic rank, so the
/// generator count always equals the rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codistribution {
    pub coords: Vec<Symbol>,
    pub generators: Vec<Expr>,
}

impl Codistribution {
    pub fn empty(coords: &[Symbol]) -> Codistribution {
        Codistribution { coords: coords.to_vec(), generators: Vec::new() }
    }

    pub fn from_generators(coords: &[Symbol], gens: &[Expr], oracle: &Oracle) -> Result<Codistribution> {
        let mut c = Codistribution::empty(coords);
        for &g in gens {
            c.insert(g, oracle)?;
        }
        Ok(c)
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn jacobian(&self) -> Vec<Vec<Expr>> {
        jacobian(&self.generators, &self.coords)
    }

    /// Rank of the span after appending `h` (without modifying `self`).
    pub fn rank_with(&self, extra: &[Expr], oracle: &Oracle) -> Result<usize> {
        let mut rows = self.jacobian();
        rows.extend(extra.iter().map(|&h| gradient(h, &self.coords)));
        oracle.rank(&rows)
    }

    /// Adds `h` if its differential is independent of the current span.
    pub fn insert(&mut self, h: Expr, oracle: &Oracle) -> Result<bool> {
        if self.rank() == self.coords.len() {
            return Ok(false);
        }
        let g = gradient(h, &self.coords);
        if g.iter().all(Expr::is_zero) {
            return Ok(false);
        }
        let mut rows = self.jacobian();
        rows.push(g);
        if oracle.rank(&rows)? > self.rank() {
            self.generators.push(h);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Whether `dh` lies in the span.
    pub fn contains(&self, h: Expr, oracle: &Oracle) -> Result<bool> {
        Ok(self.rank_with(&[h], oracle)? == self.rank())
    }

    /// Whether the covector `row` lies in the span.
    pub fn contains_row(&self, row: &[Expr], oracle: &Oracle) -> Result<bool> {
        let mut rows = self.jacobian();
        rows.push(row.to_vec());
        Ok(oracle.rank(&rows)? == self.rank())
    }

    /// Same generators viewed over a larger coordinate list.
    pub fn over(&self, coords: &[Symbol]) -> Codistribution {
        Codistribution { coords: coords.to_vec(), generators: self.generators.clone() }
    }

    /// Mutual inclusion by the append-rank test.
    pub fn same_span(&self, other: &Codistribution, oracle: &Oracle) -> Result<bool> {
        Ok(self.rank() == other.rank() && self.rank_with(&other.generators, oracle)? == self.rank())
    }
}

/// Span of a list of vector fields.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Distribution {
    pub generators: Vec<Field>,
}

impl Distribution {
    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    /// Adds `f` if it raises the generic rank.
    pub fn insert(&mut self, f: Field, oracle: &Oracle) -> Result<bool> {
        if is_zero_field(&f) {
            return Ok(false);
        }
        let mut rows = self.generators.clone();
        rows.push(f.clone());
        if oracle.rank(&rows)? > self.rank() {
            self.generators.push(f);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    pub fn contains(&self, f: &[Expr], oracle: &Oracle) -> Result<bool> {
        let mut rows = self.generators.clone();
        rows.push(f.to_vec());
        Ok(oracle.rank(&rows)? == self.rank())
    }
}

/// Result of a closure: the invariant codistribution plus the rank reached
/// after each recursion step (entry 0 is the starting rank).
#[derive(Clone, Debug)]
pub struct Closure {
    pub codist: Codistribution,
    pub ranks: Vec<usize>,
}

impl Closure {
    /// Index of the first step whose rank equals the final one.
    pub fn converged_at(&self) -> usize {
        let last = *self.ranks.last().unwrap_or(&0);
        self.ranks.iter().position(|&r| r == last).unwrap_or(0)
    }
}

/// Smallest codistribution containing `omega` and invariant under `ops`.
pub fn closure(omega: &Codistribution, ops: &[LieOp], ctx: &Ctx) -> Result<Closure> {
    conditional_closure(omega, ops, &[], &[], ctx)
}

/// Closure in which every generator spawns its derivatives along `tau`, and
/// spawns those along `xi` only when its derivatives along every `zeta`
/// vanish.
pub fn conditional_closure(
    omega: &Codistribution,
    tau: &[LieOp],
    xi: &[LieOp],
    zeta: &[LieOp],
    ctx: &Ctx,
) -> Result<Closure> {
    let coords = omega.coords.clone();
    let mut codist = omega.clone();
    let mut ranks = vec![codist.rank()];
    let mut frontier = codist.generators.clone();
    while !frontier.is_empty() && codist.rank() < coords.len() {
        let mut next = Vec::new();
        for &w in &frontier {
            let mut ops: Vec<&LieOp> = tau.iter().collect();
            if !xi.is_empty() {
                let mut free = true;
                for z in zeta {
                    let lz = z.apply(w, &coords);
                    if !ctx.oracle.is_zero(lz)? {
                        free = false;
                        break;
                    }
                }
                if free {
                    ops.extend(xi);
                }
            }
            for op in ops {
                if op.is_trivial() {
                    continue;
                }
                let l = ctx.check_size(op.apply(w, &coords), "Lie derivative")?;
                if codist.insert(l, &ctx.oracle)? {
                    next.push(l);
                }
            }
        }
        ranks.push(codist.rank());
        frontier = next;
    }
    if ranks.len() == 1 || ranks[ranks.len() - 1] != ranks[ranks.len() - 2] {
        // record the stationary step explicitly
        ranks.push(codist.rank());
    }
    Ok(Closure { codist, ranks })
}

/// Matrix with entry `(i, j) = L_{g^j} λ_i`.
pub fn recon_matrix(model: &SystemModel, lambdas: &[Expr]) -> Vec<Vec<Expr>> {
    lambdas
        .iter()
        .map(|&l| model.unknown.iter().map(|u| lie_derivative(&u.field, l, &model.state)).collect())
        .collect()
}

/// Unknown-input degree of reconstructability from a codistribution.
pub fn deg_w(model: &SystemModel, omega: &Codistribution, oracle: &Oracle) -> Result<usize> {
    Ok(deg_w_range(model, omega, oracle)?.1)
}

/// Smallest and largest rank of the reconstructability matrix over the
/// sample points; they differ near the boundary of the generic open set.
pub fn deg_w_range(model: &SystemModel, omega: &Codistribution, oracle: &Oracle) -> Result<(usize, usize)> {
    if model.m_w() == 0 || omega.rank() == 0 {
        return Ok((0, 0));
    }
    oracle.rank_range(&recon_matrix(model, &omega.generators))
}

/// Rows of `omega`'s Jacobian restricted to the coordinates `keep`, pruned
/// to an independent set.
pub fn project_x(omega: &Codistribution, keep: &[Symbol], oracle: &Oracle) -> Result<Vec<Vec<Expr>>> {
    let mut kept: Vec<Vec<Expr>> = Vec::new();
    for &h in &omega.generators {
        let row = gradient(h, keep);
        if row.iter().all(Expr::is_zero) {
            continue;
        }
        let mut rows = kept.clone();
        rows.push(row.clone());
        if oracle.rank(&rows)? > kept.len() {
            kept.push(row);
        }
        if kept.len() == keep.len() {
            break;
        }
    }
    Ok(kept)
}

/// One recursion step `Ω + Σ L_op Ω`, applied to every generator.
pub fn closure_step(omega: &Codistribution, ops: &[LieOp], ctx: &Ctx) -> Result<Codistribution> {
    let mut out = omega.clone();
    for &w in &omega.generators {
        for op in ops {
            if op.is_trivial() {
                continue;
            }
            let l = ctx.check_size(op.apply(w, &omega.coords), "Lie derivative")?;
            out.insert(l, &ctx.oracle)?;
        }
    }
    Ok(out)
}

/// Vector fields annihilated by every differential in `omega`.
pub fn orthogonal_complement(omega: &Codistribution, oracle: &Oracle) -> Result<Distribution> {
    let rows = omega
        .jacobian()
        .into_iter()
        .map(|row| row.into_iter().map(|e| tidy(e, oracle)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let basis = kernel(&rows, omega.coords.len(), oracle)?;
    let generators = basis.into_iter().map(|v| tidy_field(&v, oracle)).collect::<Result<_>>()?;
    Ok(Distribution { generators })
}

/// Entrywise [`tidy`], then the field rescaled by its entries' common
/// denominator when that reads shorter.
pub fn tidy_field(v: &[Expr], oracle: &Oracle) -> Result<Field> {
    let v: Field = v.iter().map(|&e| tidy(e, oracle)).collect::<Result<_>>()?;
    let mut dens: Vec<Expr> = Vec::new();
    for e in &v {
        if let Node::Binary(BinaryOp::Div, _, d) = e.node() {
            if !dens.contains(&d) {
                dens.push(d);
            }
        }
    }
    if dens.is_empty() {
        return Ok(v);
    }
    let scale = dens.iter().fold(Expr::one(), |a, d| a * *d);
    let scaled: Field = v.iter().map(|&e| simplify(e * scale)).collect();
    let len = |f: &[Expr]| f.iter().map(|e| e.to_string().len()).sum::<usize>();
    if len(&scaled) < len(&v) && !oracle.is_zero(scale)? {
        Ok(scaled)
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::parse;
    use crate::sysmodel::model_from_strs;

    fn e(s: &str) -> Expr {
        parse(s).unwrap()
    }

    fn syms(names: &[&str]) -> Vec<Symbol> {
        names.iter().map(|s| Symbol::new(s)).collect()
    }

    #[test]
    fn unicycle_lie_derivatives_and_closure() {
        let ctx = Ctx::default();
        let x = syms(&["x_R", "y_R", "theta_R"]);
        let h = e("pi - theta_R + atan2(y_R, x_R)");
        let f1 = vec![e("cos(theta_R)"), e("sin(theta_R)"), Expr::zero()];
        let f2 = vec![Expr::zero(), Expr::zero(), Expr::one()];
        assert_eq!(lie_derivative(&f2, h, &x), Expr::int(-1));
        assert_eq!(lie_derivative(&f1, Expr::int(7), &x), Expr::zero());
        let c = closure(
            &Codistribution::from_generators(&x, &[h], &ctx.oracle).unwrap(),
            &[LieOp::new(f1.clone()), LieOp::new(f2)],
            &ctx,
        )
        .unwrap();
        assert_eq!(c.codist.rank(), 2);
        assert_eq!(c.codist.generators[1], lie_derivative(&f1, h, &x));
        let perp = orthogonal_complement(&c.codist, &ctx.oracle).unwrap();
        assert_eq!(perp.rank(), 1);
        assert!(perp.contains(&[e("-y_R"), e("x_R"), Expr::one()], &ctx.oracle).unwrap());
    }

    #[test]
    fn polar_unicycle_bracket() {
        let ctx = Ctx::default();
        let x = syms(&["r", "phi", "theta_R"]);
        let g = vec![e("cos(theta_R - phi)"), e("sin(theta_R - phi)/r"), Expr::zero()];
        let f = vec![Expr::zero(), Expr::zero(), Expr::one()];
        let h = e("phi - theta_R");
        let l1 = lie_derivative(&g, h, &x);
        assert!(ctx.oracle.is_zero(l1 - e("-sin(phi - theta_R)/r")).unwrap());
        let phi1 = scale_field(Expr::one() / l1, &lie_bracket(&g, &f, &x));
        let expected = [e("r"), e("cos(phi - theta_R)/sin(phi - theta_R)"), Expr::zero()];
        for (a, b) in phi1.iter().zip(&expected) {
            assert!(ctx.oracle.is_zero(*a - *b).unwrap(), "{a} vs {b}");
        }
        assert!(is_zero_field(&lie_bracket(&f, &f, &x)));
    }

    #[test]
    fn time_variant_operator_adds_partial_t() {
        let x = syms(&["x"]);
        let op = LieOp::timed(vec![Expr::one()], Some(Symbol::new("t")));
        assert_eq!(op.apply(e("x*t"), &x), e("t + x"));
    }

    #[test]
    fn conditional_closure_vacuous_condition_matches_closure() {
        let ctx = Ctx::default();
        let x = syms(&["a", "b", "c"]);
        let om = Codistribution::from_generators(&x, &[e("a")], &ctx.oracle).unwrap();
        let f = LieOp::new(vec![e("b"), e("c"), Expr::zero()]);
        let plain = closure(&om, std::slice::from_ref(&f), &ctx).unwrap();
        let cond = conditional_closure(&om, &[], &[f], &[], &ctx).unwrap();
        assert_eq!(plain.codist, cond.codist);
        assert_eq!(plain.ranks, [1, 2, 3, 3]);
        assert_eq!(plain.converged_at(), 2);
    }

    #[test]
    fn deg_w_and_recon_matrix() {
        let ctx = Ctx::default();
        let polar = model_from_strs(
            &["r", "phi", "theta_R"],
            None,
            &[("omega", &["0", "0", "1"])],
            &[("v", &["cos(theta_R - phi)", "sin(theta_R - phi)/r", "0"])],
            &["phi - theta_R"],
        )
        .unwrap();
        let om = Codistribution::from_generators(&polar.state, &polar.outputs, &ctx.oracle).unwrap();
        assert_eq!(deg_w(&polar, &om, &ctx.oracle).unwrap(), 1);
        let rm = recon_matrix(&polar, &[Expr::int(3)]);
        assert!(rm[0].iter().all(Expr::is_zero));
    }

    #[test]
    fn projection_drops_augmented_directions() {
        let ctx = Ctx::default();
        let x = syms(&["p", "q", "w1"]);
        let om = Codistribution::from_generators(&x, &[e("w1"), e("p + w1")], &ctx.oracle).unwrap();
        let rows = project_x(&om, &x[..2], &ctx.oracle).unwrap();
        assert_eq!(rows.len(), 1);
        let only_w = Codistribution::from_generators(&x, &[e("w1")], &ctx.oracle).unwrap();
        assert!(project_x(&only_w, &x[..2], &ctx.oracle).unwrap().is_empty());
    }
}
