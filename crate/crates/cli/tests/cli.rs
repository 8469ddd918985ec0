use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lamelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lamelab")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const GENERIC_A: [&str; 4] = ["--a", "0.23+0.31i", "--a", "-0.17+0.12i"];

#[test]
fn b2_variety_has_thirteen_solutions() {
    let out = lamelab(&[&["b2-variety"][..], &GENERIC_A].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["result"]["count"], 13);
    assert_eq!(v["result"]["solutions"].as_array().unwrap().len(), 13);
    assert_eq!(v["result"]["pass"], true);
    // Complex numbers as [re, im] and the tolerances echoed.
    assert_eq!(v["manifest"]["config"]["a"][1], serde_json::json!([-0.17, 0.12]));
    assert_eq!(v["manifest"]["config"]["tolerances"]["variety"], 1e-11);
    let summary = String::from_utf8_lossy(&out.stderr);
    assert!(summary.starts_with("b2-variety: 13 solutions"), "{summary}");
}

#[test]
fn missing_omega_is_a_validation_error() {
    let out = lamelab(&["qb2-variety"]);
    assert_eq!(code(&out), 2);
    let v = json(&out);
    assert_eq!(v["error"]["message"], "omega required");
    assert_eq!(v["error"]["exit_code"], 2);
}

#[test]
fn b2_calogero_moser_is_quasi_invariant() {
    let out = lamelab(&["quasiinv-check", "--name", "B2_CM"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["all_pass"], true);
    let bad = lamelab(&["quasiinv-check", "--name", "NOPE"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn numerical_failures_exit_with_3() {
    let out = lamelab(&["spectrum", "--tau", "2i", "--m", "0", "--n", "2"]);
    assert_eq!(code(&out), 3);
    assert_eq!(json(&out)["error"]["kind"], "NoSolution");
    let off = lamelab(&[&["b2-eigen", "--k", "0.7+0.1i", "--k", "0.2-0.5i"][..], &GENERIC_A].concat());
    assert_eq!(code(&off), 3);
    assert_eq!(json(&off)["error"]["kind"], "NotEigen");
    let tau = lamelab(&["spectrum", "--tau", "0.3+1.2i", "--m", "2", "--n", "6"]);
    assert_eq!(code(&tau), 2);
}

#[test]
fn tolerance_overrides_are_bounded() {
    let out = lamelab(&["wp", "--z", "0.1", "--tol-eigen", "1e-16"]);
    assert_eq!(code(&out), 2);
    let ok = lamelab(&["wp", "--z", "0.1", "--tol-eigen", "1e-15"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(json(&ok)["manifest"]["config"]["tolerances"]["eigen"], 1e-15);
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_lamelab"))
            .args(["qb2-variety", "--omega", "0.1", "--seed", "7"])
            .env("LAMELAB_THREADS", threads)
            .output()
            .unwrap()
    };
    let first = run("1");
    assert_eq!(code(&first), 0);
    assert_eq!(json(&first)["result"]["count"], 17);
    for t in ["1", "3", "8"] {
        assert_eq!(run(t).stdout, first.stdout);
    }
    let other = lamelab(&["qb2-variety", "--omega", "0.1", "--seed", "8"]);
    assert_ne!(other.stdout, first.stdout);
}

#[test]
fn wall_time_only_on_request() {
    let plain = json(&lamelab(&["theta", "--z", "0.1+0.2i"]));
    assert!(plain["manifest"].get("wall_time_s").is_none());
    let timed = json(&lamelab(&["theta", "--z", "0.1+0.2i", "--timing"]));
    assert!(timed["manifest"]["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn verify_file_round_trip_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "variety.json");
    let out = lamelab(&[&["b2-variety", "-o", &file][..], &GENERIC_A].concat());
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());

    let check = lamelab(&["verify-file", &file]);
    assert_eq!(code(&check), 0, "{}", String::from_utf8_lossy(&check.stdout));
    let v = json(&check);
    assert_eq!(v["result"]["checked"], 13);
    assert!(v["result"]["max_deviation"].as_f64().unwrap() <= 1e-12);

    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    let r = doc["result"]["solutions"][4]["residual"].as_f64().unwrap();
    doc["result"]["solutions"][4]["residual"] = (r + 1e-9).into();
    let bad = path(dir.path(), "tampered.json");
    std::fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();
    let check = lamelab(&["verify-file", &bad]);
    assert_eq!(code(&check), 3);
    assert_eq!(json(&check)["error"]["kind"], "VerifyMismatch");
}

#[test]
fn verify_file_reruns_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "hiet.json");
    assert_eq!(code(&lamelab(&["hietq-eigen", "--omega", "0.1", "--seed", "2", "-o", &file])), 0);
    let check = lamelab(&["verify-file", &file]);
    assert_eq!(code(&check), 0);
    assert_eq!(json(&check)["result"]["mode"], "recorded configuration re-run");
}

#[test]
fn spectrum_from_a_config_file_with_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "grid.csv");
    let cfg = path(dir.path(), "run.json");
    let text = serde_json::json!({
        "command": "spectrum",
        "tau": [0.0, 2.0],
        "label": [2, 6],
        "csv": csv,
    });
    std::fs::write(&cfg, text.to_string()).unwrap();
    let out = lamelab(&["--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let r = &json(&out)["result"];
    for key in ["a1", "a2", "E", "gamma_fits", "grid_max"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert!(r["variety_residual"].as_f64().unwrap() <= 1e-11);
    for f in r["gamma_fits"].as_array().unwrap() {
        assert!((f["gamma"].as_f64().unwrap() - 2.0).abs() <= 0.05);
    }
    let grid = std::fs::read_to_string(&csv).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("x1_re,x1_im,x2_re,x2_im,f_re,f_im"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len() as u64, r["grid_points"].as_u64().unwrap());
    let max = rows.iter().map(|v| v[4].hypot(v[5])).fold(0.0, f64::max);
    assert!((max - r["grid_max"].as_f64().unwrap()).abs() <= 1e-9 * max);

    // A flag on the command line overrides the file.
    let out = lamelab(&["--config", &cfg, "spectrum", "--m", "3", "--n", "9"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["label"], serde_json::json!([3, 9]));
}

#[test]
fn bad_config_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "run.json");
    std::fs::write(&cfg, r#"{"command": "wp", "z": [0.1, 0.0], "colour": 3}"#).unwrap();
    assert_eq!(code(&lamelab(&["--config", &cfg])), 2);
    assert_eq!(code(&lamelab(&["--config", &path(dir.path(), "missing.json")])), 2);
    assert_eq!(code(&lamelab(&["spectrum", "--m", "2"])), 2);
}
