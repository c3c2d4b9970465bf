//! Browser bindings: analysis, simulation and symmetry checks on a model
//! given as JSON text.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use uiobs::fullsolver::analyze;
use uiobs::liegeom::Ctx;
use uiobs::simcheck::{indistinguishability_check, simulate, Signals, Transform};
use uiobs::symcore::OracleConfig;
use uiobs::sysmodel::SystemModel;

fn ctx(seed: u32) -> Ctx {
    Ctx::new(OracleConfig::with_seed(seed as u64), Default::default())
}

fn model(text: &str) -> Result<SystemModel, String> {
    SystemModel::from_json(text).map_err(|e| e.to_string())
}

fn parse_x0(x0: &str) -> Result<Vec<f64>, String> {
    x0.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("initial state `{s}`: {e}")))
        .collect()
}

/// Report text followed by the result document, separated by a blank line.
#[wasm_bindgen]
pub fn analyze_model(model_json: &str, seed: u32, symmetries: bool) -> Result<String, String> {
    let ctx = ctx(seed);
    let m = model(model_json)?;
    let res = analyze(&m, &ctx).map_err(|e| e.to_string())?;
    let report = res.report(&ctx, symmetries).map_err(|e| e.to_string())?;
    let doc = res.to_doc(&ctx, symmetries).map_err(|e| e.to_string())?;
    Ok(format!("{report}\n{}", doc.to_json()))
}

/// CSV trajectory with every input set to its default smooth signal.
#[wasm_bindgen]
pub fn simulate_model(model_json: &str, x0: &str, horizon: f64, step: f64) -> Result<String, String> {
    let m = model(model_json)?;
    let sig = Signals::smooth_defaults(&m);
    let tr = simulate(&m, &parse_x0(x0)?, &sig, horizon, step).map_err(|e| e.to_string())?;
    Ok(tr.to_csv(&m.state_names()))
}

#[derive(Serialize)]
struct CheckDoc {
    generator: Vec<String>,
    state: Vec<String>,
    indistinguishable: bool,
    max_deviation: f64,
    transformed_x0: Vec<f64>,
    unknown_scale: Vec<f64>,
}

/// Flows `x0` along the `index`-th symmetry generator for `eps` and
/// compares outputs over `horizon`. `x0` is over the analysed system's state.
#[wasm_bindgen]
pub fn check_symmetry(model_json: &str, x0: &str, index: u32, eps: f64, horizon: f64, seed: u32) -> Result<String, String> {
    let ctx = ctx(seed);
    let m = model(model_json)?;
    let res = analyze(&m, &ctx).map_err(|e| e.to_string())?;
    let sym = res.symmetries(&ctx).map_err(|e| e.to_string())?;
    let g = sym
        .generators
        .get(index as usize)
        .ok_or_else(|| format!("there are {} symmetry generators, no index {index}", sym.generators.len()))?;
    let fm = &res.final_model;
    let sig = Signals::smooth_defaults(fm);
    let t = Transform::Generator { field: g.clone(), eps };
    let c = indistinguishability_check(fm, &parse_x0(x0)?, &t, &sig, horizon, 1e-3, 1e-6, &ctx)
        .map_err(|e| e.to_string())?;
    let doc = CheckDoc {
        generator: g.iter().map(ToString::to_string).collect(),
        state: fm.state_names(),
        indistinguishable: c.indistinguishable,
        max_deviation: c.max_deviation,
        transformed_x0: c.transformed_x0,
        unknown_scale: c.unknown_scale,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())
}
