use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn geometries() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../geometries")
}

fn osculate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osculate"))
        .current_dir(geometries())
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn checks(r: &Value) -> &Vec<Value> {
    r["result"]["checks"].as_array().expect("checks array")
}

#[test]
fn describe_heisenberg_origin() {
    let out = osculate(&["describe", "heis3.geom", "--point", "0,0,0"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    assert_eq!(r["schema"], "osculate/1");
    assert_eq!(r["command"], "describe");
    let d = &r["result"]["points"][0];
    assert_eq!(d["b"]["coeffs"], serde_json::json!([[[0.0, -0.5], [0.5, 0.0]]]));
    assert_eq!(d["skew_rank"], 2);
    assert_eq!(d["class_hint"], "heisenberg-like");
    assert_eq!(d["bracket_table"][0][1][0], -1.0);
    assert!(!d["group_law_samples"].as_array().unwrap().is_empty());
}

#[test]
fn describe_foliation_is_abelian() {
    let out = osculate(&["describe", "foliation.geom", "--point", "1,2,3"]);
    assert_eq!(code(&out), 0);
    let d = &report(&out)["result"]["points"][0];
    assert_eq!(d["class_hint"], "abelian");
    assert_eq!(d["skew_rank"], 0);
    let zero = d["b"]["coeffs"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|k| k.as_array().unwrap())
        .flat_map(|row| row.as_array().unwrap())
        .all(|x| x.as_f64() == Some(0.0));
    assert!(zero);
}

#[test]
fn describe_heisenberg_off_origin() {
    let out = osculate(&["describe", "heis3.geom", "--point", "0,1,0"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["result"]["points"][0]["skew_rank"], 2);
}

#[test]
fn verify_heisenberg_all_suites() {
    let out = osculate(&["verify", "heis3.geom", "--suite", "all", "--seed", "7"]);
    let r = report(&out);
    let failed: Vec<&Value> = checks(&r).iter().filter(|c| c["pass"] != true).collect();
    assert_eq!(code(&out), 0, "failed checks: {failed:#?}");
    let names: Vec<&str> = checks(&r).iter().map(|c| c["name"].as_str().unwrap()).collect();
    for expected in [
        "group-axioms",
        "bracket-table",
        "second-order",
        "oracle-equivalence",
        "bracket-sign",
        "h-adapted-defect",
        "groupoid-laws",
        "chart-round-trip",
        "transition",
        "convergence",
        "flow-cross-check",
    ] {
        assert!(names.contains(&expected), "missing {expected}");
    }
}

#[test]
fn verify_broken_exponential_fails() {
    let out = osculate(&["verify", "broken-exp.run"]);
    assert_eq!(code(&out), 1);
    let r = report(&out);
    assert_eq!(r["pass"], false);
    assert_eq!(r["result"]["failed"], serde_json::json!(["h-adapted-defect"]));
    let broken = checks(&r).iter().find(|c| c["name"] == "h-adapted-defect").unwrap();
    assert!(broken["residual"].as_f64().unwrap() >= 0.5);
}

#[test]
fn verify_foliation_group_suite() {
    let out = osculate(&["verify", "foliation.geom", "--suite", "group"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    let tables: Vec<&Value> = checks(&r).iter().filter(|c| c["name"] == "bracket-table").collect();
    assert!(!tables.is_empty());
    assert!(tables.iter().all(|c| c["detail"]["max_bracket"] == 0.0));
}

#[test]
fn verify_handle_flag_selects_handles() {
    let out = osculate(&["verify", "heis3.geom", "--suite", "expmap", "--handle", "shear=raw(h1, h2, n1 + h1^2)"]);
    assert_eq!(code(&out), 1);
    let r = report(&out);
    assert_eq!(r["result"]["handles"][0]["name"], "shear");
}

#[test]
fn probe_convergence_polarized() {
    let out = osculate(&["probe", "convergence", "--a", "(t,t,t^2)", "--b", "(t,0,0)", "heis3-polarized.geom"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    let body = &r["result"]["result"];
    assert_eq!(body["target"], serde_json::json!({ "h": [0.0, 1.0], "n": [0.0] }));
    assert!(body["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn probe_second_order_heisenberg() {
    let out = osculate(&["probe", "second-order", "--X", "X1", "--Y", "X2", "heis3.geom"]);
    assert_eq!(code(&out), 0);
    let body = &report(&out)["result"]["result"];
    let cross = body["measured_cross_term"].as_array().unwrap();
    assert!((cross[2].as_f64().unwrap() + 0.5).abs() < 1e-6);
    assert_eq!(body["probe"]["pass"], true);
}

#[test]
fn probe_transition_heisenberg() {
    let out = osculate(&["probe", "transition", "--h1", "fs", "--h2", "conn", "heis3.geom"]);
    assert_eq!(code(&out), 0);
    let rep = &report(&out)["result"]["result"]["report"];
    assert_eq!(rep["bounded"], true);
    assert_eq!(rep["probe"]["pass"], true);
}

#[test]
fn probe_transition_genuine_order() {
    let out = osculate(&["probe", "transition", "--h1", "fs", "--h2", "chart", "contact-twist.geom", "--point", "0.1,0.2,0"]);
    assert_eq!(code(&out), 0);
    let rep = &report(&out)["result"]["result"]["report"];
    assert!(rep["probe"]["fitted_slope"].as_f64().unwrap() >= 0.9);
}

#[test]
fn probe_transition_against_broken_map_fails() {
    let out = osculate(&["probe", "transition", "--h1", "fs", "--h2", "broken", "heis3.geom"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn identical_runs_are_byte_identical_modulo_timestamp() {
    let strip = |out: &Output| {
        let mut v = report(out);
        v.as_object_mut().unwrap().remove("timestamp");
        serde_json::to_string(&v).unwrap()
    };
    let args = ["verify", "contact-twist.geom", "--suite", "all", "--seed", "11", "--samples", "3"];
    let a = osculate(&args);
    let b = osculate(&args);
    assert_eq!(strip(&a), strip(&b));
    let c = osculate(&["verify", "contact-twist.geom", "--suite", "all", "--seed", "12", "--samples", "3"]);
    assert_ne!(strip(&a), strip(&c));
}

#[test]
fn csv_and_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let json = dir.path().join("report.json");
    let out = osculate(&[
        "probe",
        "transition",
        "heis3.geom",
        "--csv",
        csv.to_str().unwrap(),
        "--output",
        json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("series,t,residual,ratio"));
    assert_eq!(lines.count(), 8);
    assert_eq!(std::fs::read(&json).unwrap(), out.stdout);
}

#[test]
fn run_file_with_run_subcommand() {
    let out = osculate(&["run", "broken-exp.run"]);
    assert_eq!(code(&out), 1);
    assert_eq!(report(&out)["command"], "verify");
}

#[test]
fn config_errors_exit_two() {
    let malformed = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/malformed/syntax.geom");
    let cases: Vec<Vec<String>> = vec![
        vec!["describe".into(), "missing.geom".into()],
        vec!["describe".into(), malformed.to_string_lossy().into_owned()],
        vec!["describe".into(), "heis3.geom".into(), "--point".into(), "0,0".into()],
        vec!["probe".into(), "second-order".into(), "heis3.geom".into()],
        vec!["probe".into(), "convergence".into(), "--a".into(), "(t,0,t)".into(), "--b".into(), "(t,0,0)".into(), "heis3.geom".into()],
        vec!["probe".into(), "transition".into(), "--h1".into(), "nope".into(), "heis3.geom".into()],
        vec!["describe".into(), "broken-exp.run".into()],
        vec!["verify".into(), "heis3.geom".into(), "--t-grid".into(), "3..4".into()],
        vec!["bogus".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = osculate(&refs);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
