use std::path::{Path, PathBuf};

use homoclinic_cli::run;
use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn invoke(cmd: &str, sc: &Path, out: &Path, extra: &[&str]) -> (i32, Value) {
    let mut args = vec![
        "homoclinic".to_string(),
        cmd.into(),
        "--scenario".into(),
        sc.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let code = run(args);
    let report = std::fs::read_to_string(out.join("report.json")).map(|t| serde_json::from_str(&t).unwrap());
    (code, report.unwrap_or(Value::Null))
}

#[test]
fn spectrum_of_the_diagonal_example() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = invoke("spectrum", &scenario("autonomous.toml"), dir.path(), &["--format", "csv"]);
    assert_eq!(code, 0);
    let iv = rep["results"]["spectra"][0]["intervals"].as_array().unwrap();
    assert_eq!(iv.len(), 2);
    for (i, m) in [0.5, 2.0].iter().enumerate() {
        let lo = iv[i][0].as_f64().unwrap();
        let hi = iv[i][1].as_f64().unwrap();
        assert!((lo - m).abs() < 1e-2 && (hi - m).abs() < 1e-2);
    }
    let mut rd = csv::Reader::from_path(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["lambda_index", "gamma", "verdict"]);
    assert_eq!(rd.records().count(), 64);
}

#[test]
fn mobius_realization_class_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = invoke("class", &scenario("realization_mobius.toml"), dir.path(), &[]);
    assert_eq!(code, 0);
    let class = &rep["results"]["class"];
    assert_eq!((class["virtual_rank"].as_i64(), class["delta_w1"].as_i64()), (Some(0), Some(1)));

    let tab = tempfile::tempdir().unwrap();
    assert_eq!(invoke("realize", &scenario("realization_mobius.toml"), tab.path(), &[]).0, 0);
    let again = tempfile::tempdir().unwrap();
    let (code, rep2) = invoke("class", &tab.path().join("realized.toml"), again.path(), &[]);
    assert_eq!(code, 0);
    assert_eq!(rep2["results"]["class"]["delta_w1"], class["delta_w1"]);
    assert_eq!(rep2["results"]["class"]["virtual_rank"], class["virtual_rank"]);
}

#[test]
fn nonzero_index_fails_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = invoke("certify", &scenario("realization_trivial.toml"), dir.path(), &[]);
    assert_eq!(code, 2);
    assert_eq!(rep["status"], "hypotheses_failed");
    assert_eq!(rep["results"]["certificate"]["index"], 1);
}

#[test]
fn index_table_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = invoke("index", &scenario("asymptotic.toml"), dir.path(), &["--format", "csv", "--seed", "42"]);
    assert_eq!(code, 0);
    assert_eq!(rep["seed"], 42);
    assert_eq!(rep["scenario"]["seed"], 42);
    let mut rd = csv::Reader::from_path(dir.path().join("index.csv")).unwrap();
    let row = rd.records().next().unwrap().unwrap();
    assert_eq!(&row[row.len() - 1], "true");
}

#[test]
fn random_solves_depend_only_on_the_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let sc = scenario("quadratic.toml");
    let (ca, ra) = invoke("solve", &sc, a.path(), &["--threads", "1"]);
    let (_, rb) = invoke("solve", &sc, b.path(), &["--threads", "3"]);
    let (_, rc) = invoke("solve", &sc, c.path(), &["--seed", "8"]);
    assert_eq!(ca, 0);
    assert_eq!(ra, rb);
    assert_ne!(ra["results"], rc["results"]);
    let sols = ra["results"]["solves"][0]["solutions"].as_array().unwrap();
    assert_eq!(sols.len(), 2);
    assert!(sols.iter().all(|s| s["residual"].as_f64().unwrap() <= 1e-10));
}

#[test]
fn input_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\n[field]\nbuiltin = \"autonomous\"\nmatrix = [[1.0, 2.0]]\n").unwrap();
    let (code, rep) = invoke("spectrum", &bad, dir.path(), &[]);
    assert_eq!(code, 3);
    assert_eq!(rep["status"], "input_error");

    std::fs::write(&bad, "schema_version = 9\n[field]\nbuiltin = \"autonomous\"\nmatrix = [[2.0]]\n").unwrap();
    assert_eq!(invoke("spectrum", &bad, dir.path(), &[]).0, 3);

    std::fs::write(&bad, "schema_version = 1\nbogus = 1\n[field]\nbuiltin = \"autonomous\"\nmatrix = [[2.0]]\n").unwrap();
    assert_eq!(invoke("spectrum", &bad, dir.path(), &[]).0, 3);

    assert_eq!(invoke("class", &scenario("autonomous.toml"), dir.path(), &[]).0, 3);
    assert_eq!(invoke("spectrum", &dir.path().join("missing.toml"), dir.path(), &[]).0, 3);
}

#[test]
fn non_hyperbolic_field_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("identity.toml");
    std::fs::write(&sc, "schema_version = 1\n[field]\nbuiltin = \"autonomous\"\nmatrix = [[1.0, 0.0], [0.0, 1.0]]\n").unwrap();
    let (code, rep) = invoke("index", &sc, dir.path(), &[]);
    assert_eq!(code, 4);
    assert!(!rep["warnings"].as_array().unwrap().is_empty());
}
