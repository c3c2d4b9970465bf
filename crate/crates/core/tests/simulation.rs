use proptest::prelude::*;

use uiobs::fullsolver::analyze;
use uiobs::liegeom::Ctx;
use uiobs::simcheck::{
    indistinguishability_check, output_deviation, simulate, verify_ui_reconstruction, Signals, Transform,
};
use uiobs::symcore::{parse, Expr, OracleConfig};
use uiobs::sysmodel::{model_from_strs, SystemModel};
use uiobs::uirecon::{reconstruct, Mode};

fn load(name: &str) -> SystemModel {
    let path = format!("{}/../../models/{name}.json", env!("CARGO_MANIFEST_DIR"));
    SystemModel::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ctx() -> Ctx {
    Ctx::new(OracleConfig::with_seed(3), Default::default())
}

fn oscillator() -> SystemModel {
    model_from_strs(&["p", "q"], Some(&["q", "-p"]), &[], &[], &["p"]).unwrap()
}

fn none() -> Signals {
    Signals { known: vec![], unknown: vec![] }
}

#[test]
fn rk4_error_shrinks_with_the_fourth_power_of_the_step() {
    let m = oscillator();
    let err = |step: f64| {
        let tr = simulate(&m, &[1.0, 0.0], &none(), 2.0, step).unwrap();
        let t = *tr.times.last().unwrap();
        let x = tr.states.last().unwrap();
        (x[0] - t.cos()).abs().max((x[1] + t.sin()).abs())
    };
    let (coarse, fine) = (err(0.1), err(0.05));
    let ratio = coarse / fine;
    assert!((12.0..20.0).contains(&ratio), "error ratio {ratio} ({coarse:e} / {fine:e})");
}

#[test]
fn csv_has_one_row_per_grid_point() {
    let m = oscillator();
    let tr = simulate(&m, &[1.0, 0.0], &none(), 0.5, 0.1).unwrap();
    let csv = tr.to_csv(&m.state_names());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,p,q,y1");
    assert_eq!(lines.len(), tr.times.len() + 1);
    assert_eq!(tr.times.len(), 6);
}

#[test]
fn inconsistent_signal_count_is_a_model_error() {
    let m = load("unicycle_known");
    let err = simulate(&m, &[1.0, 1.0, 0.0], &none(), 1.0, 0.1).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_deviation_is_symmetric(a in prop::array::uniform3(0.5f64..2.0), b in prop::array::uniform3(0.5f64..2.0)) {
        let m = load("unicycle_known");
        let sig = Signals::smooth_defaults(&m);
        let ab = output_deviation(&m, &a, &sig, &b, &sig, 0.5, 1e-2).unwrap();
        let ba = output_deviation(&m, &b, &sig, &a, &sig, 0.5, 1e-2).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(output_deviation(&m, &a, &sig, &a, &sig, 0.5, 1e-2).unwrap(), 0.0);
    }

    #[test]
    fn symmetry_flows_keep_outputs(x in 0.5f64..2.0, y in 0.5f64..2.0, th in -1.0f64..1.0, eps in -0.5f64..0.5) {
        let ctx = ctx();
        let m = load("polar_unicycle");
        let res = analyze(&m, &ctx).unwrap();
        let fm = &res.final_model;
        let sym = res.symmetries(&ctx).unwrap();
        let sig = Signals::smooth_defaults(fm);
        for g in [["r", "0", "0"], ["0", "1", "1"]] {
            let field: Vec<Expr> = g.iter().map(|s| parse(s).unwrap()).collect();
            prop_assert!(sym.contains(&field, &ctx.oracle).unwrap());
            let t = Transform::Generator { field, eps };
            let c = indistinguishability_check(fm, &[x, y, th], &t, &sig, 1.0, 1e-3, 1e-6, &ctx).unwrap();
            prop_assert!(c.indistinguishable, "generator {:?}: deviation {}", g, c.max_deviation);
        }
    }
}

#[test]
fn scaling_of_unknown_input_is_read_off_the_generator() {
    let ctx = ctx();
    let m = load("unicycle_unknown_v");
    let xi: Vec<Expr> = ["x_R", "y_R", "0"].iter().map(|s| parse(s).unwrap()).collect();
    let t = Transform::Generator { field: xi, eps: 0.2 };
    let c = indistinguishability_check(&m, &[1.0, 0.5, 0.3], &t, &Signals::smooth_defaults(&m), 1.0, 1e-3, 1e-6, &ctx)
        .unwrap();
    assert!(c.inferred);
    assert!((c.unknown_scale[0] - 0.2f64.exp()).abs() < 1e-9, "{:?}", c.unknown_scale);
    assert!(c.indistinguishable, "deviation {}", c.max_deviation);
}

#[test]
fn reconstructions_substitute_back_exactly() {
    for name in ["unicycle_unknown_v", "polar_unicycle", "vi_variant2", "vi_variant3"] {
        let ctx = ctx();
        let res = analyze(&load(name), &ctx).unwrap();
        let rec = reconstruct(&res, &ctx).unwrap().unwrap();
        assert_eq!(rec.mode, Mode::Full, "{name}");
        for r in rec.substitution_residuals() {
            assert!(ctx.oracle.is_zero(r).unwrap(), "{name}: residual {r}");
        }
        let num = verify_ui_reconstruction(&rec, 10, 99, &ctx).unwrap();
        assert!(num < 1e-9, "{name}: numeric residual {num}");
    }
}

#[test]
fn no_unknown_input_means_nothing_to_reconstruct() {
    let ctx = ctx();
    let res = analyze(&load("unicycle_known"), &ctx).unwrap();
    assert!(reconstruct(&res, &ctx).unwrap().is_none());
}
