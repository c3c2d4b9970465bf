//! The general observability pipeline for systems with unknown inputs:
//! selection of reconstructing functions, the degree-raising loops with
//! state augmentation, and the final classification.

use serde::{Deserialize, Serialize};

use crate::canonical::{delta, observability_canonical, omega_g, tilde_o, ReconTensor};
use crate::error::{Error, Result};
use crate::liegeom::{
    closure_step, conditional_closure, deg_w_range, lie_derivative, orthogonal_complement, project_x, recon_matrix,
    Codistribution, Ctx, Distribution, Field, LieOp,
};
use crate::symcore::{tidy, Expr, Symbol};
use crate::sysmodel::SystemModel;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CanonicalFormOriginal,
    CanonizedByExtension,
    NonCanonizableHighestDegree(usize),
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::CanonicalFormOriginal => write!(f, "canonical_form_original"),
            Verdict::CanonizedByExtension => write!(f, "canonized_by_extension"),
            Verdict::NonCanonizableHighestDegree(m) => write!(f, "non_canonizable_highest_degree({m})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    DegW { value: usize },
    Selected { m: usize, functions: Vec<String>, ui_order: Vec<String> },
    Closure { m: usize, ranks: Vec<usize> },
    KHat { m: usize, s_x: usize, r_m: usize, k_hat: usize },
    Augment { pass: usize, state_dim: usize, extension: String },
    NestedPass { pass: usize, chain_terms: bool, ranks: Vec<usize>, deg_w: usize },
    Stationary { pass: usize, dim: usize },
    Canonical { s: usize, r: usize, tilde_rank: usize, chains: usize, pruned: bool, ranks: Vec<usize> },
    Oracle { points_used: usize, rank_queries: usize, zero_queries: usize, rejected_points: usize },
    /// `deg_w` took different values at different sample points; the largest is used.
    DegWUnstable { min: usize, max: usize },
}

/// Δ generators observed on one augmented model, with the indices of the
/// augmented coordinates.
#[derive(Clone, Debug)]
pub struct DeltaSnapshot {
    pub augmented: Vec<usize>,
    pub generators: Vec<Field>,
}

#[derive(Clone, Debug)]
pub struct AnalysisResult {
    pub original: SystemModel,
    pub final_model: SystemModel,
    pub observability: Codistribution,
    pub obs_rank: usize,
    /// For each original state coordinate, whether it is observable.
    pub per_state_observable: Vec<(String, bool)>,
    pub selected_functions: Vec<Expr>,
    pub verdict: Verdict,
    pub trace: Vec<TraceEvent>,
    /// `s` and `r` of the final canonical system, when unknown inputs exist.
    pub s: Option<usize>,
    pub r: Option<usize>,
    /// Tensor of the final canonical system.
    pub tensor: Option<ReconTensor>,
    pub delta_snapshots: Vec<DeltaSnapshot>,
}

/// Greedy scan of `omega`'s generators, keeping those that raise the rank
/// of the reconstructability matrix, until `m` are kept.
pub fn select_functions(model: &SystemModel, omega: &Codistribution, m: usize, ctx: &Ctx) -> Result<Vec<Expr>> {
    let mut kept: Vec<Expr> = Vec::new();
    for &h in &omega.generators {
        if kept.len() == m {
            break;
        }
        let mut cand = kept.clone();
        cand.push(h);
        if ctx.oracle.rank(&recon_matrix(model, &cand))? > kept.len() {
            kept = cand;
        }
    }
    if kept.len() < m {
        return Err(Error::RankDeficient(format!(
            "selected only {} of {m} reconstructing functions; oracle answers disagree",
            kept.len()
        )));
    }
    Ok(kept)
}

fn drift_op(model: &SystemModel) -> LieOp {
    LieOp::timed(model.drift.clone(), model.time_symbol())
}

fn known_ops(model: &SystemModel) -> Vec<LieOp> {
    model.known.iter().map(|k| LieOp::new(k.field.clone())).collect()
}

/// Iterates `Ω^m_k = Ω^m_{k−1} + L̇_{g^0} Ω^m_{k−1} + Σ_{j≤m} L_{g^j} Ω^m_{k−1}`
/// on successively augmented copies of `model` until the projection onto
/// the state of `model` stops growing; returns that `k`.
pub fn s_x_of(model: &SystemModel, m: usize, h_tilde: &[Expr], ctx: &Ctx) -> Result<usize> {
    let keep: Vec<Symbol> = model.state.clone();
    let mut sigma = model.clone();
    let mut om = Codistribution::from_generators(&sigma.state, h_tilde, &ctx.oracle)?;
    let mut x_rank = project_x(&om, &keep, &ctx.oracle)?.len();
    let cap = iteration_cap(model, ctx);
    for k in 1..=cap {
        sigma = sigma.augment(m)?.0;
        om = om.over(&sigma.state);
        let mut ops = vec![drift_op(&sigma)];
        ops.extend(sigma.unknown[..m].iter().map(|u| LieOp::new(u.field.clone())));
        om = closure_step(&om, &ops, ctx)?;
        let r = project_x(&om, &keep, &ctx.oracle)?.len();
        if r == x_rank {
            return Ok(k);
        }
        x_rank = r;
    }
    Err(Error::Budget(format!("s_x did not converge within {cap} passes")))
}

/// Iterates `Δ_k = Δ_{k−1} + Σ_{β≤m} [Δ_{k−1}]^β` with one augmentation per
/// pass, using `tensor`'s `ν`; returns `k − 1` at the first stationary pass.
pub fn r_m_of(model: &SystemModel, m: usize, tensor: &ReconTensor, ctx: &Ctx) -> Result<usize> {
    Ok(r_m_detail(model, m, tensor, ctx)?.0)
}

fn r_m_detail(
    model: &SystemModel,
    m: usize,
    tensor: &ReconTensor,
    ctx: &Ctx,
) -> Result<(usize, Vec<DeltaSnapshot>)> {
    let mut sigma = model.clone();
    let mut dist = Distribution::default();
    for f in sigma.known_fields() {
        dist.insert(f, &ctx.oracle)?;
    }
    let mut snaps = Vec::new();
    let cap = iteration_cap(model, ctx);
    for k in 1..=cap {
        let (next, old_pos) = sigma.augment(m)?;
        sigma = next;
        let n = sigma.n();
        let pad = |v: &Field| {
            let mut out = vec![Expr::zero(); n];
            for (i, e) in v.iter().enumerate() {
                out[old_pos[i]] = *e;
            }
            out
        };
        let prev = Distribution { generators: dist.generators.iter().map(pad).collect() };
        let t = tensor.with_model(&sigma);
        let mut grown = prev.clone();
        for phi in &prev.generators {
            for b in t.autobrackets(phi, ctx)? {
                grown.insert(b, &ctx.oracle)?;
            }
        }
        snaps.push(DeltaSnapshot { augmented: sigma.augmented_coords(), generators: grown.generators.clone() });
        if grown.rank() == prev.rank() {
            return Ok((k - 1, snaps));
        }
        dist = grown;
    }
    Err(Error::Budget(format!("r_m did not converge within {cap} passes")))
}

fn iteration_cap(model: &SystemModel, ctx: &Ctx) -> usize {
    match ctx.limits.max_iter {
        0 => 10 * model.provenance.original_dim.max(1),
        k => k,
    }
}

fn names(model: &SystemModel) -> Vec<String> {
    model.unknown.iter().map(|u| u.name.clone()).collect()
}

/// Chains `[f^i]^{(α_1..α_len)}` of exactly `len` autobrackets.
fn chains(known: &[Field], t: &ReconTensor, len: usize, ctx: &Ctx) -> Result<Vec<Field>> {
    let mut level: Vec<Field> = known.to_vec();
    let mut seen = std::collections::HashSet::new();
    for _ in 0..len {
        let mut next = Vec::new();
        for phi in &level {
            for b in t.autobrackets(phi, ctx)? {
                if !crate::liegeom::is_zero_field(&b) && seen.insert(b.clone()) {
                    next.push(b);
                }
            }
        }
        if next.len() > ctx.limits.term_budget {
            return Err(Error::Budget(format!("more than {} bracket chains", ctx.limits.term_budget)));
        }
        level = next;
    }
    Ok(level)
}

fn deg_w(sigma: &SystemModel, omega: &Codistribution, ctx: &Ctx, trace: &mut Vec<TraceEvent>) -> Result<usize> {
    let (min, max) = deg_w_range(sigma, omega, &ctx.oracle)?;
    if min != max {
        trace.push(TraceEvent::DegWUnstable { min, max });
    }
    Ok(max)
}

pub fn analyze(model: &SystemModel, ctx: &Ctx) -> Result<AnalysisResult> {
    let mw = model.m_w();
    let cap = iteration_cap(model, ctx);
    let mut passes = 0usize;
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut sigma = model.clone();
    let mut omega = Codistribution::from_generators(&sigma.state, &sigma.outputs, &ctx.oracle)?;
    let mut non_canonical: Option<usize> = None;

    'main: loop {
        let d = deg_w(&sigma, &omega, ctx, &mut trace)?;
        trace.push(TraceEvent::DegW { value: d });
        if d == mw {
            break;
        }
        let mut m: isize = d as isize - 1;
        let mut tensor = None;
        loop {
            let d = deg_w(&sigma, &omega, ctx, &mut trace)?;
            if (d as isize) <= m || d == mw {
                if tensor.is_some() {
                    trace.push(TraceEvent::DegW { value: d });
                }
                break;
            }
            m = d as isize;
            let mu = d;
            let h = select_functions(&sigma, &omega, mu, ctx)?;
            sigma = sigma.reorder_uis(&h, &ctx.oracle)?.0;
            trace.push(TraceEvent::Selected {
                m: mu,
                functions: h.iter().map(ToString::to_string).collect(),
                ui_order: names(&sigma),
            });
            let t = ReconTensor::build(&sigma, &h, ctx)?;
            let zeta: Vec<LieOp> = sigma.unknown[mu..].iter().map(|u| LieOp::new(u.field.clone())).collect();
            let cl = conditional_closure(&omega, &known_ops(&sigma), &t.hat_ops(), &zeta, ctx)?;
            trace.push(TraceEvent::Closure { m: mu, ranks: cl.ranks.clone() });
            omega = cl.codist;
            tensor = Some(t);
        }
        if deg_w(&sigma, &omega, ctx, &mut trace)? == mw {
            break;
        }
        let m = m as usize;
        let tensor = tensor.expect("the selection loop runs at least once");
        let k_hat = if sigma.m_u() == 0 {
            0
        } else {
            let s_x = s_x_of(&sigma, m, &tensor.h_tilde, ctx)?;
            let (r_m, snaps) = r_m_detail(&sigma, m, &tensor, ctx)?;
            snapshots.extend(snaps);
            trace.push(TraceEvent::KHat { m, s_x, r_m, k_hat: s_x + r_m });
            s_x + r_m
        };
        let mut prev = omega.clone();
        let mut k = 0usize;
        loop {
            k += 1;
            passes += 1;
            if passes > cap {
                return Err(Error::Budget(format!(
                    "iteration cap {cap} reached after {} trace events; last: {:?}",
                    trace.len(),
                    trace.last()
                )));
            }
            sigma = sigma.augment(m)?.0;
            trace.push(TraceEvent::Augment { pass: k, state_dim: sigma.n(), extension: sigma.uie_label() });
            prev = prev.over(&sigma.state);
            let t = tensor.with_model(&sigma);
            let mut star = prev.clone();
            let chain_terms = k >= 2 && k <= k_hat;
            if chain_terms {
                for phi in chains(&sigma.known_fields(), &t, k - 1, ctx)? {
                    for &h in &t.h_tilde {
                        let l = ctx.check_size(lie_derivative(&phi, h, &sigma.state), "bracket-chain derivative")?;
                        star.insert(l, &ctx.oracle)?;
                    }
                }
            }
            let zeta: Vec<LieOp> = sigma.unknown[m..].iter().map(|u| LieOp::new(u.field.clone())).collect();
            let cl = conditional_closure(&star, &known_ops(&sigma), &t.hat_ops(), &zeta, ctx)?;
            let cur = cl.codist;
            let d = deg_w(&sigma, &cur, ctx, &mut trace)?;
            trace.push(TraceEvent::NestedPass { pass: k, chain_terms, ranks: cl.ranks.clone(), deg_w: d });
            if k > k_hat && cur.rank() == prev.rank() {
                trace.push(TraceEvent::Stationary { pass: k, dim: cur.rank() });
                omega = cur;
                non_canonical = Some(m);
                break 'main;
            }
            if d > m {
                omega = cur;
                break;
            }
            prev = cur;
        }
    }

    let mut result = AnalysisResult {
        original: model.clone(),
        final_model: sigma.clone(),
        observability: omega.clone(),
        obs_rank: 0,
        per_state_observable: Vec::new(),
        selected_functions: Vec::new(),
        verdict: Verdict::CanonicalFormOriginal,
        trace: Vec::new(),
        s: None,
        r: None,
        tensor: None,
        delta_snapshots: Vec::new(),
    };
    if let Some(m) = non_canonical {
        result.verdict = Verdict::NonCanonizableHighestDegree(m);
    } else {
        let h = select_functions(&sigma, &omega, mw, ctx)?;
        sigma = sigma.reorder_uis(&h, &ctx.oracle)?.0;
        let t = ReconTensor::build(&sigma, &h, ctx)?;
        let known = sigma.known_fields();
        let (s, r, otilde, stats) = if mw == 0 {
            (None, None, Codistribution::empty(&sigma.state), None)
        } else {
            let (_, s) = omega_g(&t, ctx)?;
            let (dc, r) = delta(&known, &t, ctx)?;
            snapshots.push(DeltaSnapshot { augmented: sigma.augmented_coords(), generators: dc.dist.generators });
            let (ot, st) = tilde_o(&known, &t, s + r, ctx)?;
            (Some(s), Some(r), ot, Some(st))
        };
        let o = observability_canonical(&sigma, &t, &omega, &otilde, ctx)?;
        trace.push(TraceEvent::Canonical {
            s: s.unwrap_or(0),
            r: r.unwrap_or(0),
            tilde_rank: otilde.rank(),
            chains: stats.as_ref().map_or(0, |x| x.chains),
            pruned: stats.as_ref().is_some_and(|x| x.pruned),
            ranks: o.ranks.clone(),
        });
        result.observability = o.codist;
        result.selected_functions = h;
        result.s = s;
        result.r = r;
        result.tensor = Some(t);
        result.verdict =
            if sigma.is_augmented() { Verdict::CanonizedByExtension } else { Verdict::CanonicalFormOriginal };
    }
    let st = ctx.oracle.stats();
    trace.push(TraceEvent::Oracle {
        points_used: st.points_used.len(),
        rank_queries: st.rank_queries,
        zero_queries: st.zero_queries,
        rejected_points: st.rejected_points,
    });
    result.obs_rank = result.observability.rank();
    result.per_state_observable = model
        .state
        .iter()
        .map(|&x| Ok((x.name(), result.observability.contains(x.expr(), &ctx.oracle)?)))
        .collect::<Result<_>>()?;
    result.final_model = sigma;
    result.trace = trace;
    result.delta_snapshots = snapshots;
    Ok(result)
}

impl AnalysisResult {
    /// Generators of the orthogonal distribution of `O`.
    pub fn symmetries(&self, ctx: &Ctx) -> Result<Distribution> {
        orthogonal_complement(&self.observability, &ctx.oracle)
    }

    /// Observable functions in tidied form.
    pub fn observable_basis(&self, ctx: &Ctx) -> Result<Vec<Expr>> {
        self.observability.generators.iter().map(|&e| tidy(e, &ctx.oracle)).collect()
    }

    pub fn to_doc(&self, ctx: &Ctx, with_symmetries: bool) -> Result<ResultDoc> {
        let symmetries = if with_symmetries {
            self.symmetries(ctx)?.generators.iter().map(|v| v.iter().map(ToString::to_string).collect()).collect()
        } else {
            Vec::new()
        };
        let show = |v: &[Expr]| -> Result<Vec<String>> {
            v.iter().map(|&e| Ok(tidy(e, &ctx.oracle)?.to_string())).collect()
        };
        let cfg = ctx.oracle.config();
        Ok(ResultDoc {
            verdict: self.verdict.to_string(),
            obs_rank: self.obs_rank,
            state_dim: self.final_model.n(),
            state: self.final_model.state_names(),
            observable_basis: show(&self.observability.generators)?,
            symmetries,
            selected_functions: show(&self.selected_functions)?,
            uie_orders: self.final_model.provenance.orders.clone(),
            per_state_observable: self.per_state_observable.clone(),
            seed: cfg.seed,
            samples: cfg.samples,
            trace: self.trace.clone(),
        })
    }

    /// Human-readable report.
    pub fn report(&self, ctx: &Ctx, with_symmetries: bool) -> Result<String> {
        use std::fmt::Write;
        let mut s = String::new();
        let fm = &self.final_model;
        let _ = writeln!(s, "verdict: {}", self.verdict);
        let _ = writeln!(s, "system: {} ({} states)", fm.uie_label(), fm.n());
        let _ = writeln!(s, "state: [{}]", fm.state_names().join(", "));
        let _ = writeln!(s, "observability rank: {} of {}", self.obs_rank, fm.n());
        let _ = writeln!(s, "observable functions:");
        for g in self.observable_basis(ctx)? {
            let _ = writeln!(s, "  {g}");
        }
        let _ = writeln!(s, "original states:");
        for (x, ok) in &self.per_state_observable {
            let _ = writeln!(s, "  {x}: {}", if *ok { "observable" } else { "not observable" });
        }
        if !self.selected_functions.is_empty() {
            let _ = writeln!(s, "reconstructing functions:");
            for &h in &self.selected_functions {
                let _ = writeln!(s, "  {}", tidy(h, &ctx.oracle)?);
            }
        }
        if let (Some(a), Some(b)) = (self.s, self.r) {
            let _ = writeln!(s, "s = {a}, r = {b}");
        }
        for e in &self.trace {
            if let TraceEvent::DegWUnstable { min, max } = e {
                let _ = writeln!(s, "warning: deg_w ranged from {min} to {max} over the sample points");
            }
        }
        if with_symmetries {
            let sym = self.symmetries(ctx)?;
            let _ = writeln!(s, "symmetries ({}):", sym.rank());
            for v in &sym.generators {
                let parts: Vec<String> = v.iter().map(ToString::to_string).collect();
                let _ = writeln!(s, "  [{}]", parts.join(", "));
            }
        }
        Ok(s)
    }
}

/// Machine-readable analysis result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub verdict: String,
    pub obs_rank: usize,
    pub state_dim: usize,
    pub state: Vec<String>,
    pub observable_basis: Vec<String>,
    pub symmetries: Vec<Vec<String>>,
    pub selected_functions: Vec<String>,
    pub uie_orders: Vec<Option<usize>>,
    pub per_state_observable: Vec<(String, bool)>,
    pub seed: u64,
    pub samples: usize,
    pub trace: Vec<TraceEvent>,
}

impl ResultDoc {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result documents always serialize")
    }
}
