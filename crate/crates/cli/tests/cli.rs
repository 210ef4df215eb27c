use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fouk::io::read_grid;
use fouk::verifier::VerificationReport;
use serde_json::Value;

fn fouk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fouk")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const KOLMOGOROV: &str = r#"{"n": 2, "B": [[0, 1], [0, 0]], "Q": [[0, 0], [0, 2]], "s": 1.0}"#;
const HALF_DEGENERATE: &str = r#"{"n": 2, "B": [[0, 0], [0, 0]], "Q": [[1, 0], [0, 0]], "s": 1.0}"#;

#[test]
fn analyze_kolmogorov_file() {
    let dir = tempfile::tempdir().unwrap();
    let op = write(dir.path(), "kolmogorov.json", KOLMOGOROV);
    let out = fouk(&["analyze", "--op", &op, "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["S_basis"].as_array().unwrap().len(), 0);
    assert_eq!(v["r"], 1);
    assert_eq!(v["kalman"], true);
    assert!(v.get("generated_unix").is_none());
}

#[test]
fn analyze_zero_diffusion() {
    let dir = tempfile::tempdir().unwrap();
    let op = write(
        dir.path(),
        "q_zero.json",
        r#"{"n": 3, "B": [[0,1,0],[0,0,1],[0,0,0]], "Q": [[0,0,0],[0,0,0],[0,0,0]], "s": 0.5}"#,
    );
    let out = fouk(&["analyze", "--op", &op]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["dim_s"], 3);
    assert_eq!(v["kalman"], false);
    assert!(v["generated_unix"].is_u64());
}

#[test]
fn kolmogorov_verification_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = fouk(&["verify", "kolmogorov", "--s", "1.0", "--out", out_dir.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("kolmogorov.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert!((v["fitted"]["x-short/slope"].as_f64().unwrap() + 1.5).abs() < 0.05);
    assert!((v["fitted"]["v-short/slope"].as_f64().unwrap() + 0.5).abs() < 0.05);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let d = dir.path().join(sub);
        let out = fouk(&[
            "verify",
            "appendix",
            "--preset",
            "kolmogorov:s=0.5",
            "--t-points",
            "6",
            "--out",
            d.to_str().unwrap(),
            "--no-timestamp",
            "--seed",
            "7",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(d.join("appendix.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn csv_output_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let op = write(dir.path(), "op.json", HALF_DEGENERATE);
    let out = fouk(&["verify", "witness", "--op", &op, "--format", "csv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("witness.csv")).unwrap();
    assert!(text.starts_with("experiment,parameter,value,fitted,predicted,pass"));
    let r = VerificationReport::from_csv(text.as_bytes()).unwrap();
    assert_eq!(r.experiment, "witness");
    assert!(r.pass);
    assert_eq!(r.series("norm").unwrap().points.len(), 25);
}

#[test]
fn failed_verification_exits_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let op = write(dir.path(), "op.json", HALF_DEGENERATE);
    let out = fouk(&["verify", "smoothing", "--op", &op, "--direction", "0,1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("smoothing.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], false);
    assert!(v["notes"][0].as_str().unwrap().contains("unbounded"));
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"n\": 2,\n \"B\": [[0, 1], [0, 0]],\n \"s\": 1.0}");
    let out = fouk(&["analyze", "--op", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing field `Q`") && err.contains("line 3"), "{err}");

    assert_eq!(fouk(&["analyze", "--preset", "kolmogorov"]).status.code(), Some(1));
    assert_eq!(fouk(&["analyze", "--preset", "heat:s=1"]).status.code(), Some(1));
    assert_eq!(fouk(&["analyze"]).status.code(), Some(1));
    assert_eq!(fouk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fouk(&["--help"]).status.code(), Some(0));
    let threads = Command::new(env!("CARGO_BIN_EXE_fouk"))
        .args(["analyze", "--preset", "kolmogorov:s=1"])
        .env("FOUK_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn symbol_point_values() {
    let out = fouk(&["symbol", "--preset", "fractional-heat:n=2,s=1", "--t", "0.5", "--xi", "3,-4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    // Q = 2I, s = 1: a_t = |xi|^2.
    assert!((v["a_t"].as_f64().unwrap() - 25.0).abs() < 1e-10);
    assert!((v["m_t"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["gamma"]["tau"], 0.5);
}

#[test]
fn evolve_gaussian_to_grid() {
    let dir = tempfile::tempdir().unwrap();
    let op = write(dir.path(), "op.json", KOLMOGOROV);
    let state = write(
        dir.path(),
        "u.json",
        r#"{"type": "gaussian", "amplitude": 1.0, "mu": [0, 0], "omega": [0, 0], "Gamma": [[1, 0], [0, 1]]}"#,
    );
    let out_dir = dir.path().join("run");
    let out = fouk(&[
        "evolve",
        "--op",
        &op,
        "--state",
        &state,
        "--t",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("evolve.json")).unwrap()).unwrap();
    assert!(v["fourier_error"].as_f64().unwrap() < 1e-5);
    let grid_norm = v["final_norm"].as_f64().unwrap();
    let exact = v["semi_analytic_norm"].as_f64().unwrap();
    assert!((grid_norm / exact - 1.0).abs() < 1e-6);
    let g = read_grid(&out_dir.join("evolved.c64")).unwrap();
    assert_eq!((g.n(), g.size()), (2, 128));
    assert!((g.norm_l2() / grid_norm - 1.0).abs() < 1e-6);

    // The written grid is itself a valid input state.
    let again = write(dir.path(), "g.json", r#"{"type": "grid", "N": 128, "L": 8.0, "file": "run/evolved.c64"}"#);
    let out = fouk(&["evolve", "--op", &op, "--state", &again, "--t", "0.0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_stdout(&out);
    assert!((v["final_norm"].as_f64().unwrap() / grid_norm - 1.0).abs() < 1e-6);
}
