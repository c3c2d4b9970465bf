//! Fixed-step simulation, indistinguishability along symmetries and
//! numerical checks of reconstruction formulas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::liegeom::{gradient, lie_bracket, Ctx};
use crate::symcore::{Expr, Symbol, Tape};
use crate::sysmodel::{SystemModel, TIME};
use crate::uirecon::{Mode, UIReconstruction};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 1.0;

/// Input signals as expressions in `t`, in model order.
#[derive(Clone, Debug)]
pub struct Signals {
    pub known: Vec<Expr>,
    pub unknown: Vec<Expr>,
}

impl Signals {
    /// `1 + sin((k+1) t)/2` for the `k`-th signal of each kind.
    pub fn smooth_defaults(model: &SystemModel) -> Signals {
        let t = Symbol::new(TIME).expr();
        let f = |k: usize| Expr::one() + (Expr::int(k as i64 + 1) * t).sin() / Expr::int(2);
        Signals { known: (0..model.m_u()).map(f).collect(), unknown: (0..model.m_w()).map(f).collect() }
    }

    fn scaled(&self, scales: &[f64]) -> Signals {
        let unknown = self
            .unknown
            .iter()
            .zip(scales)
            .map(|(&w, &s)| if s == 1.0 { w } else { Expr::rational(to_ratio(s)) * w })
            .collect();
        Signals { known: self.known.clone(), unknown }
    }
}

fn to_ratio(x: f64) -> num_rational::BigRational {
    num_rational::BigRational::from_float(x).expect("finite scale")
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Header `t,<state names>,y1..yp`, one row per grid point.
    pub fn to_csv(&self, state_names: &[String]) -> String {
        let p = self.outputs.first().map_or(0, Vec::len);
        let mut head = vec!["t".to_string()];
        head.extend(state_names.iter().cloned());
        head.extend((1..=p).map(|k| format!("y{k}")));
        let mut s = head.join(",");
        s.push('\n');
        for ((t, x), y) in self.times.iter().zip(&self.states).zip(&self.outputs) {
            let row: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).chain(y.iter().copied()).map(|v| format!("{v:.12e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

fn rhs_exprs(model: &SystemModel, sig: &Signals) -> Result<Vec<Expr>> {
    if sig.known.len() != model.m_u() || sig.unknown.len() != model.m_w() {
        return Err(Error::Model(format!(
            "expected {} known and {} unknown signals, got {} and {}",
            model.m_u(),
            model.m_w(),
            sig.known.len(),
            sig.unknown.len()
        )));
    }
    let mut f = model.drift.clone();
    let terms = model.known.iter().map(|k| &k.field).zip(&sig.known).chain(model.unknown.iter().map(|u| &u.field).zip(&sig.unknown));
    for (field, &s) in terms {
        for (a, &c) in f.iter_mut().zip(field) {
            if !c.is_zero() {
                *a = *a + s * c;
            }
        }
    }
    Ok(f)
}

fn inputs_with_time(model: &SystemModel) -> Vec<Symbol> {
    let mut v = model.state.clone();
    v.push(Symbol::new(TIME));
    v
}

fn finite(v: &[f64], what: &str, t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite {what} at t = {t}")))
    }
}

fn rk4(tape: &Tape, x: &mut [f64], t: f64, h: f64, buf: &mut Vec<f64>) -> Result<()> {
    let n = x.len();
    let f = |y: &[f64], t: f64, buf: &mut Vec<f64>| -> Result<Vec<f64>> {
        let mut arg = y.to_vec();
        arg.push(t);
        let mut out = vec![0.0; n];
        tape.eval_into(&arg, buf, &mut out);
        finite(&out, "vector field", t)?;
        Ok(out)
    };
    let k1 = f(x, t, buf)?;
    let y: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = f(&y, t + 0.5 * h, buf)?;
    let y: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
    let k3 = f(&y, t + 0.5 * h, buf)?;
    let y: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
    let k4 = f(&y, t + h, buf)?;
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Classical RK4 on a fixed grid `0, step, .., horizon`.
pub fn simulate(model: &SystemModel, x0: &[f64], sig: &Signals, horizon: f64, step: f64) -> Result<Trajectory> {
    if step.is_nan() || step <= 0.0 || horizon.is_nan() || horizon < 0.0 {
        return Err(Error::Model(format!("need step > 0 and horizon >= 0, got {step} and {horizon}")));
    }
    if x0.len() != model.n() {
        return Err(Error::Model(format!("initial state has {} entries, model has {}", x0.len(), model.n())));
    }
    let ins = inputs_with_time(model);
    let f = Tape::new(&rhs_exprs(model, sig)?, &ins)?;
    let y = Tape::new(&model.outputs, &ins)?;
    let steps = (horizon / step).round() as usize;
    let mut x = x0.to_vec();
    let mut buf = Vec::new();
    let mut tr = Trajectory { times: Vec::with_capacity(steps + 1), states: Vec::new(), outputs: Vec::new() };
    for k in 0..=steps {
        let t = k as f64 * step;
        let mut arg = x.clone();
        arg.push(t);
        let mut out = vec![0.0; model.outputs.len()];
        y.eval_into(&arg, &mut buf, &mut out);
        finite(&out, "output", t)?;
        tr.times.push(t);
        tr.states.push(x.clone());
        tr.outputs.push(out);
        if k < steps {
            rk4(&f, &mut x, t, step, &mut buf)?;
        }
    }
    Ok(tr)
}

/// Maximum absolute output difference between two runs.
pub fn output_deviation(
    model: &SystemModel,
    xa: &[f64],
    sa: &Signals,
    xb: &[f64],
    sb: &Signals,
    horizon: f64,
    step: f64,
) -> Result<f64> {
    let a = simulate(model, xa, sa, horizon, step)?;
    let b = simulate(model, xb, sb, horizon, step)?;
    Ok(a.outputs
        .iter()
        .zip(&b.outputs)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug)]
pub enum Transform {
    /// A finite map of the state, written in the state symbols, together
    /// with the factors applied to the unknown inputs.
    Map { state: Vec<Expr>, unknown_scale: Vec<f64> },
    /// The flow of an infinitesimal generator for parameter `eps`.
    Generator { field: Vec<Expr>, eps: f64 },
}

#[derive(Clone, Debug)]
pub struct IndistCheck {
    pub indistinguishable: bool,
    pub max_deviation: f64,
    pub transformed_x0: Vec<f64>,
    pub unknown_scale: Vec<f64>,
    /// The unknown-input factors were read off the generator.
    pub inferred: bool,
}

/// `c_k` with `[ξ, g_k] = c_k g_k`; the flow for `ε` then maps `w_k` to
/// `e^{−c_k ε} w_k`.
pub fn unknown_scaling(model: &SystemModel, xi: &[Expr], ctx: &Ctx) -> Result<Vec<f64>> {
    model
        .unknown
        .iter()
        .map(|u| {
            let br = lie_bracket(xi, &u.field, &model.state);
            let Some(k) = u.field.iter().position(|e| !e.is_zero()) else {
                return Ok(0.0);
            };
            let vals = ctx.oracle.values(&[br[k] / u.field[k]])?;
            let c = vals.first().and_then(|v| v.first()).copied().unwrap_or(0.0);
            let c = (c * 1e6).round() / 1e6;
            let cexpr = Expr::rational(to_ratio(c));
            for (b, g) in br.iter().zip(&u.field) {
                if !ctx.oracle.is_zero(*b - cexpr * *g)? {
                    return Err(Error::Model(format!(
                        "cannot infer how `{}` transforms: the bracket with the generator is not a constant multiple of its field",
                        u.name
                    )));
                }
            }
            Ok(c)
        })
        .collect()
}

fn flow(model: &SystemModel, xi: &[Expr], x0: &[f64], eps: f64) -> Result<Vec<f64>> {
    let tape = Tape::new(xi, &inputs_with_time(model))?;
    let steps = 200usize;
    let h = eps / steps as f64;
    let mut x = x0.to_vec();
    let mut buf = Vec::new();
    for _ in 0..steps {
        rk4(&tape, &mut x, 0.0, h, &mut buf)?;
    }
    Ok(x)
}

/// Simulates from `x0` and from its image under `transform` and compares
/// the outputs.
#[allow(clippy::too_many_arguments)]
pub fn indistinguishability_check(
    model: &SystemModel,
    x0: &[f64],
    transform: &Transform,
    sig: &Signals,
    horizon: f64,
    step: f64,
    tol: f64,
    ctx: &Ctx,
) -> Result<IndistCheck> {
    let (x1, scale, inferred) = match transform {
        Transform::Map { state, unknown_scale } => {
            let tape = Tape::new(state, &model.state)?;
            let x1 = tape.eval(x0);
            finite(&x1, "transformed state", 0.0)?;
            (x1, unknown_scale.clone(), false)
        }
        Transform::Generator { field, eps } => {
            let c = unknown_scaling(model, field, ctx)?;
            let inferred = c.iter().any(|&c| c != 0.0);
            let scale = c.iter().map(|c| (-c * eps).exp()).collect();
            (flow(model, field, x0, *eps)?, scale, inferred)
        }
    };
    if scale.len() != model.m_w() {
        return Err(Error::Model(format!("{} unknown-input factors for {} unknown inputs", scale.len(), model.m_w())));
    }
    let d = output_deviation(model, x0, sig, &x1, &sig.scaled(&scale), horizon, step)?;
    Ok(IndistCheck { indistinguishable: d < tol, max_deviation: d, transformed_x0: x1, unknown_scale: scale, inferred })
}

/// Evaluates a full reconstruction at random states, known inputs and
/// unknown inputs, with the rates `dh̃_l/dt = ∇h̃_l · ẋ` computed
/// numerically; returns the largest `|formula − w|`.
pub fn verify_ui_reconstruction(rec: &UIReconstruction, samples: usize, seed: u64, ctx: &Ctx) -> Result<f64> {
    if rec.mode != Mode::Full {
        return Err(Error::Model("verification needs a full reconstruction".into()));
    }
    let model = &rec.model;
    let known: Vec<Symbol> = model.known.iter().map(|k| Symbol::new(&k.name)).collect();
    let unknown: Vec<Symbol> = model.unknown.iter().map(|u| Symbol::new(&u.name)).collect();
    let mut ins = inputs_with_time(model);
    ins.extend(&known);
    ins.extend(&unknown);
    let sig = Signals {
        known: known.iter().map(Symbol::expr).collect(),
        unknown: unknown.iter().map(Symbol::expr).collect(),
    };
    let rhs = Tape::new(&rhs_exprs(model, &sig)?, &ins)?;
    let t = Symbol::new(TIME);
    let mut grads: Vec<Expr> = Vec::new();
    for &h in &rec.h_tilde {
        grads.extend(gradient(h, &model.state));
        grads.push(h.diff(t));
    }
    let grad = Tape::new(&grads, &ins)?;
    let mut fins = ins.clone();
    fins.extend(&rec.rates);
    let formula = Tape::new(&rec.expressions, &fins)?;

    let cfg = ctx.oracle.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n();
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut rejected = 0usize;
    while done < samples {
        let point: Vec<f64> = (0..ins.len())
            .map(|_| {
                let m = rng.random_range(cfg.box_lo..cfg.box_hi);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let xdot = rhs.eval(&point);
        let g = grad.eval(&point);
        let rates: Vec<f64> = g.chunks(n + 1).map(|c| c[..n].iter().zip(&xdot).map(|(a, b)| a * b).sum::<f64>() + c[n]).collect();
        let mut arg = point.clone();
        arg.extend(&rates);
        let w = formula.eval(&arg);
        if !w.iter().chain(&rates).all(|v| v.is_finite()) || w.iter().any(|v| v.abs() > 1e6) {
            rejected += 1;
            if rejected > cfg.max_resamples * samples.max(1) {
                return Err(Error::OracleExhausted { needed: samples, rejected });
            }
            continue;
        }
        let truth = &point[n + 1 + known.len()..];
        for (a, b) in w.iter().zip(truth) {
            worst = worst.max((a - b).abs());
        }
        done += 1;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::model_from_strs;

    #[test]
    fn zero_dynamics_is_constant() {
        let m = model_from_strs(&["a", "b"], Some(&["0", "0"]), &[], &[], &["a"]).unwrap();
        let s = Signals { known: vec![], unknown: vec![] };
        let tr = simulate(&m, &[0.4, -2.0], &s, 1.0, 0.1).unwrap();
        assert!(tr.states.iter().all(|x| x == &vec![0.4, -2.0]));
        assert_eq!(tr.times.len(), 11);
    }

    #[test]
    fn singular_field_is_domain_error() {
        let m = model_from_strs(&["a"], Some(&["1/a"]), &[], &[], &["a"]).unwrap();
        let s = Signals { known: vec![], unknown: vec![] };
        assert!(matches!(simulate(&m, &[0.0], &s, 1.0, 0.1), Err(Error::Domain(_))));
    }
}
