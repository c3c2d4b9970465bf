use uiobs::canonical::ReconTensor;
use uiobs::fullsolver::{analyze, ResultDoc, TraceEvent, Verdict};
use uiobs::liegeom::{lie_derivative, Ctx, LieOp};
use uiobs::symcore::linalg::mat_mul;
use uiobs::symcore::{parse, Expr, OracleConfig};
use uiobs::sysmodel::{model_from_strs, SystemModel};

const MODELS: [&str; 6] =
    ["unicycle_known", "unicycle_unknown_v", "polar_unicycle", "vi_variant1", "vi_variant2", "vi_variant3"];

fn load(name: &str) -> SystemModel {
    let path = format!("{}/../../models/{name}.json", env!("CARGO_MANIFEST_DIR"));
    SystemModel::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ctx() -> Ctx {
    Ctx::new(OracleConfig::with_seed(7), Default::default())
}

#[test]
fn verdicts_and_ranks_of_the_bundled_models() {
    let expect = [
        ("unicycle_known", Verdict::CanonicalFormOriginal, 2, 3),
        ("unicycle_unknown_v", Verdict::CanonicalFormOriginal, 1, 3),
        ("polar_unicycle", Verdict::CanonicalFormOriginal, 1, 3),
        ("vi_variant1", Verdict::CanonicalFormOriginal, 4, 5),
        ("vi_variant2", Verdict::CanonizedByExtension, 4, 6),
    ];
    for (name, verdict, rank, n) in expect {
        let res = analyze(&load(name), &ctx()).unwrap();
        assert_eq!(res.verdict, verdict, "{name}");
        assert_eq!((res.obs_rank, res.final_model.n()), (rank, n), "{name}");
    }
}

#[test]
fn observable_codistribution_is_invariant() {
    for name in ["unicycle_known", "unicycle_unknown_v", "polar_unicycle", "vi_variant1"] {
        let ctx = ctx();
        let res = analyze(&load(name), &ctx).unwrap();
        let m = &res.final_model;
        let mut ops: Vec<LieOp> = m.known.iter().map(|k| LieOp::new(k.field.clone())).collect();
        if let Some(t) = &res.tensor {
            ops.extend(t.hat_ops());
        }
        for &h in &res.observability.generators {
            for op in &ops {
                let l = op.apply(h, &m.state);
                assert!(res.observability.contains(l, &ctx.oracle).unwrap(), "{name}: derivative of {h} leaves O");
            }
        }
    }
}

#[test]
fn tensor_is_a_block_inverse() {
    for name in ["unicycle_unknown_v", "polar_unicycle", "vi_variant2", "vi_variant3"] {
        let ctx = ctx();
        let res = analyze(&load(name), &ctx).unwrap();
        let t = ReconTensor::build(&res.final_model, &res.selected_functions, &ctx).unwrap();
        let p = mat_mul(&t.mu, &t.nu);
        for (i, row) in p.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let target = if i == j { 1 } else { 0 };
                assert!(ctx.oracle.is_zero(x - Expr::int(target)).unwrap(), "{name} ({i}, {j})");
            }
        }
    }
}

#[test]
fn s_and_r_stay_within_the_state_dimension() {
    for name in MODELS {
        let res = analyze(&load(name), &ctx()).unwrap();
        let n = res.final_model.n();
        if let (Some(s), Some(r)) = (res.s, res.r) {
            assert!((1..=n).contains(&s), "{name}: s = {s}");
            assert!(r <= n, "{name}: r = {r}");
        }
    }
}

#[test]
fn selected_functions_make_the_system_canonical() {
    for name in ["unicycle_unknown_v", "polar_unicycle", "vi_variant2", "vi_variant3"] {
        let ctx = ctx();
        let res = analyze(&load(name), &ctx).unwrap();
        let m = &res.final_model;
        let rows: Vec<Vec<_>> = res
            .selected_functions
            .iter()
            .map(|&h| m.unknown.iter().map(|u| lie_derivative(&u.field, h, &m.state)).collect())
            .collect();
        assert_eq!(ctx.oracle.rank(&rows).unwrap(), m.m_w(), "{name}");
    }
}

#[test]
fn result_document_roundtrips_and_is_reproducible() {
    let model = load("polar_unicycle");
    let a = analyze(&model, &ctx()).unwrap().to_doc(&ctx(), true).unwrap();
    let b = analyze(&model, &ctx()).unwrap().to_doc(&ctx(), true).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let back: ResultDoc = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
    assert_eq!(a.symmetries.len(), 2);
}

#[test]
fn model_json_roundtrip_keeps_the_analysis() {
    for name in MODELS {
        let m = load(name);
        let again = SystemModel::from_json(&m.to_json()).unwrap();
        let (ra, rb) = (analyze(&m, &ctx()).unwrap(), analyze(&again, &ctx()).unwrap());
        assert_eq!((ra.obs_rank, ra.verdict), (rb.obs_rank, rb.verdict), "{name}");
    }
}

#[test]
fn unobservable_state_is_flagged() {
    let m = model_from_strs(&["a", "b"], None, &[("u", &["1", "0"])], &[], &["a"]).unwrap();
    let res = analyze(&m, &ctx()).unwrap();
    assert_eq!(res.obs_rank, 1);
    assert_eq!(res.per_state_observable, vec![("a".to_string(), true), ("b".to_string(), false)]);
}

#[test]
fn malformed_models_are_model_errors() {
    for text in [
        "{",
        r#"{"state": ["x"], "outputs": ["x + "]}"#,
        r#"{"state": ["x"], "known_inputs": [{"name": "u", "field": ["1", "2"]}], "outputs": ["x"]}"#,
        r#"{"state": ["x", "x"], "outputs": ["x"]}"#,
    ] {
        let err = SystemModel::from_json(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
    assert!(matches!(parse("sin(").unwrap_err().column, 4..=5));
}

#[test]
fn sample_dependent_deg_w_is_reported() {
    let m = model_from_strs(&["x", "y"], Some(&["y", "0"]), &[], &[("w", &["sqrt(x^2) + x", "0"])], &["x"]).unwrap();
    let ctx = ctx();
    let res = analyze(&m, &ctx).unwrap();
    assert!(res.trace.iter().any(|e| matches!(e, TraceEvent::DegWUnstable { min: 0, max: 1 })), "{:?}", res.trace);
    assert!(res.report(&ctx, false).unwrap().contains("warning: deg_w ranged from 0 to 1"));
}
