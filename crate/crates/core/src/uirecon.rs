//! Unknown-input reconstruction from observable functions.
//!
//! Every formula is written in the state coordinates, the known inputs and
//! one extra symbol per function standing for its time derivative along
//! the true trajectory.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fullsolver::{select_functions, AnalysisResult, Verdict};
use crate::liegeom::{lie_derivative, recon_matrix, Ctx};
use crate::symcore::linalg::inverse;
use crate::symcore::{tidy, Expr, Symbol};
use crate::sysmodel::SystemModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Partial,
}

#[derive(Clone, Debug)]
pub struct UIReconstruction {
    pub mode: Mode,
    /// The system the formulas refer to.
    pub model: SystemModel,
    pub h_tilde: Vec<Expr>,
    /// `rates[l]` stands for `d h̃_l / dt`.
    pub rates: Vec<Symbol>,
    /// Full mode: `expressions[k]` equals the `k`-th unknown input of `model`.
    pub expressions: Vec<Expr>,
    /// Partial mode: row `j` holds `L_{g^i} h̃_j` over the unknown inputs.
    pub combination_basis: Vec<Vec<Expr>>,
    /// `rates[j] − offsets[j]` equals the combination in row `j`.
    pub offsets: Vec<Expr>,
}

/// `∂_t h + L_{g^0} h + Σ u_i L_{f_i} h`: the part of `dh/dt` that does not
/// involve the unknown inputs.
pub fn affine_offset(model: &SystemModel, h: Expr) -> Expr {
    let mut acc = lie_derivative(&model.drift, h, &model.state);
    if let Some(t) = model.time_symbol() {
        acc = acc + h.diff(t);
    }
    for k in &model.known {
        let l = lie_derivative(&k.field, h, &model.state);
        if !l.is_zero() {
            acc = acc + Symbol::new(&k.name).expr() * l;
        }
    }
    acc
}

fn rate_symbols(model: &SystemModel, m: usize) -> Vec<Symbol> {
    let taken: Vec<String> = model
        .state
        .iter()
        .map(Symbol::name)
        .chain(model.known.iter().map(|k| k.name.clone()))
        .chain(model.unknown.iter().map(|u| u.name.clone()))
        .collect();
    (1..=m)
        .map(|l| {
            let mut name = format!("dh_{l}");
            while taken.contains(&name) {
                name.push('_');
            }
            Symbol::new(&name)
        })
        .collect()
}

fn tidy_all(v: &[Expr], ctx: &Ctx) -> Result<Vec<Expr>> {
    v.iter().map(|&e| tidy(e, &ctx.oracle)).collect()
}

/// Inverts `dh̃_j/dt = a_j + Σ_i μ^i_j w_i` for all unknown inputs.
pub fn reconstruct_full(model: &SystemModel, h_tilde: &[Expr], ctx: &Ctx) -> Result<UIReconstruction> {
    let mw = model.m_w();
    if h_tilde.len() != mw {
        return Err(Error::Model(format!("{} functions given for {mw} unknown inputs", h_tilde.len())));
    }
    let h_tilde = &tidy_all(h_tilde, ctx)?;
    let rm = recon_matrix(model, h_tilde);
    let b: Vec<Vec<Expr>> = (0..mw).map(|i| rm.iter().map(|row| row[i]).collect()).collect();
    let binv = inverse(&b, &ctx.oracle)?;
    let rates = rate_symbols(model, mw);
    let offsets: Vec<Expr> = h_tilde.iter().map(|&h| affine_offset(model, h)).collect();
    let expressions = (0..mw)
        .map(|k| {
            let mut acc = Expr::zero();
            for l in 0..mw {
                if !binv[l][k].is_zero() {
                    acc = acc + binv[l][k] * (rates[l].expr() - offsets[l]);
                }
            }
            ctx.check_size(acc, "reconstruction formula")?;
            tidy(acc, &ctx.oracle)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UIReconstruction {
        mode: Mode::Full,
        model: model.clone(),
        h_tilde: h_tilde.to_vec(),
        rates,
        expressions,
        combination_basis: Vec::new(),
        offsets: offsets.into_iter().map(|o| tidy(o, &ctx.oracle)).collect::<Result<_>>()?,
    })
}

/// The combinations of unknown inputs fixed by `h̃_1 .. h̃_m`.
pub fn reconstruct_partial(model: &SystemModel, h_tilde: &[Expr], ctx: &Ctx) -> Result<UIReconstruction> {
    let h_tilde = &tidy_all(h_tilde, ctx)?;
    let rates = rate_symbols(model, h_tilde.len());
    let combination_basis = recon_matrix(model, h_tilde)
        .into_iter()
        .map(|row| row.into_iter().map(|e| tidy(e, &ctx.oracle)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let offsets =
        h_tilde.iter().map(|&h| tidy(affine_offset(model, h), &ctx.oracle)).collect::<Result<Vec<_>>>()?;
    Ok(UIReconstruction {
        mode: Mode::Partial,
        model: model.clone(),
        h_tilde: h_tilde.to_vec(),
        rates,
        expressions: Vec::new(),
        combination_basis,
        offsets,
    })
}

/// Full reconstruction on the final system of a canonic or canonized
/// analysis, partial otherwise. `None` when there is no unknown input.
pub fn reconstruct(result: &AnalysisResult, ctx: &Ctx) -> Result<Option<UIReconstruction>> {
    let model = &result.final_model;
    if model.m_w() == 0 {
        return Ok(None);
    }
    match result.verdict {
        Verdict::NonCanonizableHighestDegree(m) => {
            let h = select_functions(model, &result.observability, m, ctx)?;
            reconstruct_partial(model, &h, ctx).map(Some)
        }
        _ => reconstruct_full(model, &result.selected_functions, ctx).map(Some),
    }
}

impl UIReconstruction {
    /// `w_k − formula` after replacing every rate by its expansion
    /// `a_l + Σ_i μ^i_l w_i`; zero for a correct full reconstruction.
    pub fn substitution_residuals(&self) -> Vec<Expr> {
        let map = self
            .rates
            .iter()
            .zip(&self.h_tilde)
            .map(|(&r, &h)| {
                let mut e = affine_offset(&self.model, h);
                for u in &self.model.unknown {
                    let l = lie_derivative(&u.field, h, &self.model.state);
                    if !l.is_zero() {
                        e = e + Symbol::new(&u.name).expr() * l;
                    }
                }
                (r, e)
            })
            .collect();
        self.model
            .unknown
            .iter()
            .zip(&self.expressions)
            .map(|(u, f)| Symbol::new(&u.name).expr() - f.substitute(&map))
            .collect()
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("system: {}\n", self.model.uie_label()));
        for (l, (h, r)) in self.h_tilde.iter().zip(&self.rates).enumerate() {
            s.push_str(&format!("h~{} = {h}    ({r} = d/dt h~{})\n", l + 1, l + 1));
        }
        match self.mode {
            Mode::Full => {
                for (u, e) in self.model.unknown.iter().zip(&self.expressions) {
                    s.push_str(&format!("{} = {e}\n", u.name));
                }
            }
            Mode::Partial => {
                if self.combination_basis.is_empty() {
                    s.push_str("no combination of the unknown inputs can be reconstructed\n");
                }
                for ((row, o), r) in self.combination_basis.iter().zip(&self.offsets).zip(&self.rates) {
                    let terms: Vec<String> = row
                        .iter()
                        .zip(&self.model.unknown)
                        .filter(|(c, _)| !c.is_zero())
                        .map(|(c, u)| format!("({c})*{}", u.name))
                        .collect();
                    s.push_str(&format!("{} = {r} - ({o})\n", terms.join(" + ")));
                }
            }
        }
        s
    }
}
