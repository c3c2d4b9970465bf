use std::path::PathBuf;
use std::process::{Command, Output};

fn model(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uiobs")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_writes_report_and_document() {
    let dir = tempfile::tempdir().unwrap();
    let (rep, json) = (dir.path().join("r.txt"), dir.path().join("r.json"));
    let o = run(&["analyze", path(&model("vi_variant2")), "--report", path(&rep), "--json", path(&json)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(&rep).unwrap();
    assert!(report.contains("canonized_by_extension"), "{report}");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["verdict"], "canonized_by_extension");
    assert_eq!(doc["obs_rank"], 4);
    assert_eq!(doc["state_dim"], 6);
}

#[test]
fn analyze_lists_symmetries() {
    let o = run(&["analyze", path(&model("unicycle_known")), "--symmetries"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("symmetries (1):"), "{out}");
    assert!(out.contains("[-y_R, x_R, 1]"), "{out}");
}

#[test]
fn json_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let docs: Vec<String> = (0..2)
        .map(|k| {
            let p = dir.path().join(format!("{k}.json"));
            let o = run(&["analyze", path(&model("vi_variant2")), "--seed", "42", "--json", path(&p), "--trace"]);
            assert_eq!(o.status.code(), Some(0));
            std::fs::read_to_string(p).unwrap()
        })
        .collect();
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn missing_or_malformed_models_exit_2() {
    let o = run(&["analyze", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"state": ["x"], "outputs": ["x +"]}"#).unwrap();
    assert_eq!(run(&["analyze", path(&bad)]).status.code(), Some(2));
}

#[test]
fn tiny_term_budget_exits_3() {
    let o = run(&["analyze", path(&model("vi_variant2")), "--term-budget", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn invalid_oracle_settings_exit_2() {
    assert_eq!(run(&["analyze", path(&model("polar_unicycle")), "--samples", "0"]).status.code(), Some(2));
}

#[test]
fn reconstruct_prints_formula_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("rec.json");
    let o = run(&["reconstruct", path(&model("polar_unicycle")), "--json", path(&json)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("v = "), "{out}");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["mode"], "full");
    assert!(doc["max_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn reconstruct_without_unknown_inputs() {
    let o = run(&["reconstruct", path(&model("unicycle_known"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nothing to reconstruct"));
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let o = run(&[
        "simulate",
        path(&model("unicycle_known")),
        "--x0",
        "1,0,0",
        "--input",
        "v=1",
        "--input",
        "omega=0",
        "--horizon",
        "1",
        "--step",
        "0.5",
        "--csv",
        path(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(text.lines().next(), Some("t,x_R,y_R,theta_R,y1"));
    assert_eq!(rows.len(), 3);
    assert!((rows[2][1] - 2.0).abs() < 1e-12 && rows[2][2].abs() < 1e-12);
}

#[test]
fn unknown_input_name_exits_2() {
    let o = run(&["simulate", path(&model("unicycle_known")), "--x0", "1,0,0", "--input", "nope=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn symmetry_check_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("unicycle_known");
    let o = run(&["simulate", path(&m), "--x0", "1,0.5,0.2", "--check-symmetry", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("PASS"));

    let json = dir.path().join("doc.json");
    assert_eq!(run(&["analyze", path(&m), "--symmetries", "--json", path(&json)]).status.code(), Some(0));
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    doc["symmetries"][0] = serde_json::json!(["1", "0", "0"]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = run(&["simulate", path(&m), "--x0", "1,0.5,0.2", "--check-symmetry", "0", "--symmetry-file", path(&bad)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));

    let o = run(&["simulate", path(&m), "--x0", "1,0.5,0.2", "--check-symmetry", "7"]);
    assert_eq!(o.status.code(), Some(2));
}
