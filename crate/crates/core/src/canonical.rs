//! Reconstructability tensors, autobrackets and observability of systems in
//! canonical form.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::liegeom::{
    closure, gradient, is_zero_field, lie_bracket, lie_derivative, Closure, Codistribution, Ctx, Distribution,
    Field, LieOp,
};
use crate::symcore::linalg::{flush_zeros, inverse, SymMatrix};
use crate::symcore::{Expr, Symbol};
use crate::sysmodel::SystemModel;

/// The tensors `μ`, `ν = μ⁻¹` and the fields `ĝ` for a choice of `m`
/// functions `h̃` and the first `m` unknown inputs.
///
/// `mu[α][β] = μ^α_β`, row index is the field, column index the function,
/// with index 0 standing for the drift.
#[derive(Clone, Debug)]
pub struct ReconTensor {
    pub m: usize,
    pub coords: Vec<Symbol>,
    pub time: Option<Symbol>,
    pub h_tilde: Vec<Expr>,
    pub mu: SymMatrix,
    pub nu: SymMatrix,
    /// `g^0 .. g^m`.
    pub g: Vec<Field>,
    /// `ĝ^0 .. ĝ^m`.
    pub hat_g: Vec<Field>,
}

fn combine(nu: &SymMatrix, g: &[Field], n: usize) -> Vec<Field> {
    nu.iter()
        .map(|row| {
            let mut acc = vec![Expr::zero(); n];
            for (c, gb) in row.iter().zip(g) {
                if c.is_zero() {
                    continue;
                }
                for (a, x) in acc.iter_mut().zip(gb) {
                    if !x.is_zero() {
                        *a = *a + *c * *x;
                    }
                }
            }
            acc
        })
        .collect()
}

fn leading_fields(model: &SystemModel, m: usize) -> Vec<Field> {
    let mut g = vec![model.drift.clone()];
    g.extend(model.unknown[..m].iter().map(|u| u.field.clone()));
    g
}

impl ReconTensor {
    pub fn build(model: &SystemModel, h_tilde: &[Expr], ctx: &Ctx) -> Result<ReconTensor> {
        let m = h_tilde.len();
        if m > model.m_w() {
            return Err(Error::Model(format!("{m} functions but only {} unknown inputs", model.m_w())));
        }
        let coords = model.state.clone();
        let time = model.time_symbol();
        let g = leading_fields(model, m);
        let drift = LieOp::timed(g[0].clone(), time);
        let mut mu = vec![vec![Expr::zero(); m + 1]; m + 1];
        mu[0][0] = Expr::one();
        for (j, &h) in h_tilde.iter().enumerate() {
            mu[0][j + 1] = drift.apply(h, &coords);
            for i in 1..=m {
                mu[i][j + 1] = lie_derivative(&g[i], h, &coords);
            }
        }
        flush_zeros(&mut mu, &ctx.oracle)?;
        let b: SymMatrix = mu[1..].iter().map(|r| r[1..].to_vec()).collect();
        let binv = inverse(&b, &ctx.oracle)?;
        let mut nu = vec![vec![Expr::zero(); m + 1]; m + 1];
        nu[0][0] = Expr::one();
        for j in 0..m {
            let mut acc = Expr::zero();
            for i in 0..m {
                acc = acc + mu[0][i + 1] * binv[i][j];
            }
            nu[0][j + 1] = -acc;
            for i in 0..m {
                nu[i + 1][j + 1] = binv[i][j];
            }
        }
        flush_zeros(&mut nu, &ctx.oracle)?;
        for row in &nu {
            for &e in row {
                ctx.check_size(e, "reconstructability tensor")?;
            }
        }
        let hat_g = combine(&nu, &g, coords.len());
        Ok(ReconTensor { m, coords, time, h_tilde: h_tilde.to_vec(), mu, nu, g, hat_g })
    }

    /// Same `ν` and `h̃`, with `g` and `ĝ` taken from `model` (typically an
    /// augmented version of the model the tensor was built on).
    pub fn with_model(&self, model: &SystemModel) -> ReconTensor {
        let g = leading_fields(model, self.m);
        let hat_g = combine(&self.nu, &g, model.n());
        ReconTensor {
            coords: model.state.clone(),
            time: model.time_symbol(),
            g,
            hat_g,
            ..self.clone()
        }
    }

    /// Operators `L̇_{ĝ^0}, L_{ĝ^1} .. L_{ĝ^m}`.
    pub fn hat_ops(&self) -> Vec<LieOp> {
        self.hat_g
            .iter()
            .enumerate()
            .map(|(k, f)| LieOp::timed(f.clone(), if k == 0 { self.time } else { None }))
            .collect()
    }

    /// Operators `L̇_{g^0}, L_{g^1} .. L_{g^m}`.
    pub fn g_ops(&self) -> Vec<LieOp> {
        self.g
            .iter()
            .enumerate()
            .map(|(k, f)| LieOp::timed(f.clone(), if k == 0 { self.time } else { None }))
            .collect()
    }

    /// `[φ]^γ = Σ_β ν^γ_β [g^β, φ] + δ_{γ0} ∂φ/∂t` for every `γ = 0..m`.
    pub fn autobrackets(&self, phi: &[Expr], ctx: &Ctx) -> Result<Vec<Field>> {
        let n = self.coords.len();
        let brackets: Vec<Field> = self.g.iter().map(|g| lie_bracket(g, phi, &self.coords)).collect();
        let mut out = combine(&self.nu, &brackets, n);
        if let Some(t) = self.time {
            for (o, p) in out[0].iter_mut().zip(phi) {
                *o = *o + p.diff(t);
            }
        }
        for f in &out {
            for &e in f {
                ctx.check_size(e, "autobracket")?;
            }
        }
        Ok(out)
    }
}

/// `[φ] = [g, φ] / L_g h` for a single unknown input and no drift.
pub fn autobracket_single(g: &[Expr], l1: Expr, phi: &[Expr], coords: &[Symbol]) -> Field {
    lie_bracket(g, phi, coords).into_iter().map(|e| e / l1).collect()
}

/// Codistribution generated by `h̃` and closed under `L̇_{g^0}, L_{g^β}`; its
/// convergence step gives `s`.
pub fn omega_g(t: &ReconTensor, ctx: &Ctx) -> Result<(Closure, usize)> {
    let start = Codistribution::from_generators(&t.coords, &t.h_tilde, &ctx.oracle)?;
    let c = closure(&start, &t.g_ops(), ctx)?;
    let s = c.converged_at() + 1;
    Ok((c, s))
}

#[derive(Clone, Debug)]
pub struct DeltaClosure {
    pub dist: Distribution,
    pub ranks: Vec<usize>,
}

/// Distribution generated by `f^1..f^{m_u}` and closed under every
/// autobracket; `r` is its convergence step.
pub fn delta(known: &[Field], t: &ReconTensor, ctx: &Ctx) -> Result<(DeltaClosure, usize)> {
    let n = t.coords.len();
    let mut dist = Distribution::default();
    let mut frontier = Vec::new();
    for f in known {
        if dist.insert(f.clone(), &ctx.oracle)? {
            frontier.push(f.clone());
        }
    }
    let mut ranks = vec![dist.rank()];
    while !frontier.is_empty() && dist.rank() < n {
        let mut next = Vec::new();
        for phi in &frontier {
            for b in t.autobrackets(phi, ctx)? {
                if dist.insert(b.clone(), &ctx.oracle)? {
                    next.push(b);
                }
            }
        }
        ranks.push(dist.rank());
        frontier = next;
    }
    if ranks.len() == 1 || ranks[ranks.len() - 1] != ranks[ranks.len() - 2] {
        ranks.push(dist.rank());
    }
    let last = *ranks.last().unwrap_or(&0);
    let r = ranks.iter().position(|&x| x == last).unwrap_or(0);
    Ok((DeltaClosure { dist, ranks }, r))
}

/// Chains `[f^i]^{(α_1..α_j)}` of one length, with exact duplicates and
/// zero fields dropped.
fn expand_level(level: &[Field], t: &ReconTensor, seen: &mut HashSet<Field>, ctx: &Ctx) -> Result<Vec<Field>> {
    let mut out = Vec::new();
    for phi in level {
        for b in t.autobrackets(phi, ctx)? {
            if !is_zero_field(&b) && seen.insert(b.clone()) {
                out.push(b);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct TildeStats {
    /// Bracket chains visited.
    pub chains: usize,
    /// Whether subtrees were skipped by the span heuristic.
    pub pruned: bool,
}

/// `Õ`: span of `∇ L_{[f^i]^{(α_1..α_j)}} h̃_q` for `j = 0..s+r`.
///
/// Every chain is visited when the full tree fits in the term budget.
/// Otherwise a chain is not expanded further when it lies in the span of the
/// chains kept so far and contributed no new differential.
pub fn tilde_o(
    known: &[Field],
    t: &ReconTensor,
    depth: usize,
    ctx: &Ctx,
) -> Result<(Codistribution, TildeStats)> {
    let n = t.coords.len();
    let mut codist = Codistribution::empty(&t.coords);
    let mut stats = TildeStats { chains: 0, pruned: false };
    if t.m == 0 || known.is_empty() {
        return Ok((codist, stats));
    }
    let budget = ctx.limits.term_budget;
    let full: f64 = (0..=depth).map(|j| ((t.m + 1) as f64).powi(j as i32)).sum::<f64>() * known.len() as f64;
    let prune = full > budget as f64;
    stats.pruned = prune;
    let mut kept = Distribution::default();
    let mut seen: HashSet<Field> = HashSet::new();
    let mut level: Vec<Field> = known.iter().filter(|f| !is_zero_field(f) && seen.insert(f.to_vec())).cloned().collect();
    for j in 0..=depth {
        let mut expand = Vec::new();
        for phi in level {
            stats.chains += 1;
            if stats.chains > budget && prune {
                return Err(Error::Budget(format!("more than {budget} bracket chains in the canonical basis")));
            }
            let mut grew = false;
            for &h in &t.h_tilde {
                let l = ctx.check_size(lie_derivative(&phi, h, &t.coords), "bracket-chain derivative")?;
                grew |= codist.insert(l, &ctx.oracle)?;
            }
            if codist.rank() == n {
                return Ok((codist, stats));
            }
            if prune {
                let fresh = kept.insert(phi.clone(), &ctx.oracle)?;
                if !fresh && !grew {
                    continue;
                }
            }
            expand.push(phi);
        }
        if j == depth {
            break;
        }
        level = expand_level(&expand, t, &mut seen, ctx)?;
        if level.is_empty() {
            break;
        }
    }
    Ok((codist, stats))
}

/// Closure of `base + Õ + span{∇h}` under `L_{f^i}`, `L̇_{ĝ^0}` and `L_{ĝ^β}`.
pub fn observability_canonical(
    model: &SystemModel,
    t: &ReconTensor,
    base: &Codistribution,
    otilde: &Codistribution,
    ctx: &Ctx,
) -> Result<Closure> {
    let mut start = base.over(&model.state);
    for &h in otilde.generators.iter().chain(&model.outputs) {
        start.insert(h, &ctx.oracle)?;
    }
    let mut ops: Vec<LieOp> = model.known.iter().map(|k| LieOp::new(k.field.clone())).collect();
    ops.extend(t.hat_ops());
    closure(&start, &ops, ctx)
}

/// The recursion `Ω_{k+1} = Ω_k + Σ L_{f^i} Ω_k + Σ L_{ĝ^β} Ω_k +
/// span{∇ L_{[f^i]^{(α_1..α_k)}} h̃_q}`, run for `k_max` steps.
pub fn observability_reference(model: &SystemModel, t: &ReconTensor, k_max: usize, ctx: &Ctx) -> Result<Closure> {
    if k_max == 0 {
        return Err(Error::Model("the reference recursion needs k_max >= 1".into()));
    }
    let coords = &model.state;
    let n = coords.len();
    let mut codist = Codistribution::empty(coords);
    let mut frontier = Vec::new();
    for &h in &model.outputs {
        if codist.insert(h, &ctx.oracle)? {
            frontier.push(h);
        }
    }
    let mut ops: Vec<LieOp> = model.known.iter().map(|k| LieOp::new(k.field.clone())).collect();
    ops.extend(t.hat_ops());
    let mut seen: HashSet<Field> = HashSet::new();
    let mut level: Vec<Field> =
        if t.m == 0 { Vec::new() } else { model.known_fields().into_iter().filter(|f| !is_zero_field(f)).collect() };
    let mut ranks = vec![codist.rank()];
    for k in 0..k_max {
        if codist.rank() == n {
            ranks.push(n);
            continue;
        }
        let mut next = Vec::new();
        for &w in &frontier {
            for op in &ops {
                if op.is_trivial() {
                    continue;
                }
                let l = ctx.check_size(op.apply(w, coords), "Lie derivative")?;
                if codist.insert(l, &ctx.oracle)? {
                    next.push(l);
                }
            }
        }
        if k > 0 {
            level = expand_level(&level, t, &mut seen, ctx)?;
        }
        for phi in &level {
            for &h in &t.h_tilde {
                let l = ctx.check_size(lie_derivative(phi, h, coords), "bracket-chain derivative")?;
                if codist.insert(l, &ctx.oracle)? {
                    next.push(l);
                }
            }
        }
        ranks.push(codist.rank());
        frontier = next;
    }
    Ok(Closure { codist, ranks })
}

/// Whether the model is in canonical form with respect to `h̃`: the matrix
/// `L_{g^i} h̃_j` is nonsingular.
pub fn is_canonical_form(model: &SystemModel, h_tilde: &[Expr], ctx: &Ctx) -> Result<bool> {
    if h_tilde.len() != model.m_w() {
        return Ok(false);
    }
    let rows: Vec<Vec<Expr>> = h_tilde
        .iter()
        .map(|&h| {
            let grad = gradient(h, &model.state);
            model
                .unknown
                .iter()
                .map(|u| grad.iter().zip(&u.field).fold(Expr::zero(), |a, (p, q)| a + *p * *q))
                .collect()
        })
        .collect();
    Ok(ctx.oracle.rank(&rows)? == model.m_w())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::parse;
    use crate::sysmodel::model_from_strs;

    fn polar() -> SystemModel {
        model_from_strs(
            &["r", "phi", "theta_R"],
            None,
            &[("omega", &["0", "0", "1"])],
            &[("v", &["cos(theta_R - phi)", "sin(theta_R - phi)/r", "0"])],
            &["phi - theta_R"],
        )
        .unwrap()
    }

    #[test]
    fn tensor_inverts_mu() {
        let ctx = Ctx::default();
        let m = polar();
        let t = ReconTensor::build(&m, &m.outputs, &ctx).unwrap();
        assert!(ctx.oracle.is_zero(t.nu[1][1] * t.mu[1][1] - Expr::one()).unwrap());
        assert!(t.nu[0][1].is_zero());
        for (a, b) in t.hat_g[1].iter().zip(&m.unknown[0].field) {
            assert!(ctx.oracle.is_zero(*a - *b * t.nu[1][1]).unwrap());
        }
    }

    #[test]
    fn polar_unicycle_s_r_and_observability() {
        let ctx = Ctx::default();
        let m = polar();
        let t = ReconTensor::build(&m, &m.outputs, &ctx).unwrap();
        let (_, s) = omega_g(&t, &ctx).unwrap();
        let (d, r) = delta(&m.known_fields(), &t, &ctx).unwrap();
        assert_eq!((s, r), (2, 1));
        assert_eq!(d.ranks, [1, 2, 2]);
        let f = m.known_fields();
        let phi1 = t.autobrackets(&f[0], &ctx).unwrap().pop().unwrap();
        let single = autobracket_single(&m.unknown[0].field, t.mu[1][1], &f[0], &m.state);
        for (a, b) in phi1.iter().zip(&single) {
            assert!(ctx.oracle.is_zero(*a - *b).unwrap());
        }
        let phi2 = t.autobrackets(&phi1, &ctx).unwrap().pop().unwrap();
        let shown = ["-2*r*cos(phi - theta_R)/sin(phi - theta_R)", "(2*sin(phi - theta_R)^2 - 2)/sin(phi - theta_R)^2", "0"];
        for (a, b) in phi2.iter().zip(shown) {
            assert!(ctx.oracle.is_zero(*a - parse(b).unwrap()).unwrap(), "{a}");
        }
        let (ot, stats) = tilde_o(&f, &t, s + r, &ctx).unwrap();
        assert!(!stats.pruned);
        let base = Codistribution::empty(&m.state);
        let o = observability_canonical(&m, &t, &base, &ot, &ctx).unwrap();
        assert_eq!(o.codist.rank(), 1);
        assert!(o.codist.contains(parse("phi - theta_R").unwrap(), &ctx.oracle).unwrap());
        let reference = observability_reference(&m, &t, 3 * m.n() - 1, &ctx).unwrap();
        assert_eq!(reference.codist.rank(), 1);
        assert!(is_canonical_form(&m, &m.outputs, &ctx).unwrap());
    }
}
