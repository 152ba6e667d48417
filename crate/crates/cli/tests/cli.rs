//! End-to-end runs of the `gibbsdiff` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gibbsdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gibbsdiff")).args(args).output().expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = gibbsdiff(&["--seed", "7", "--out", out, "simulate", "--preset", "brownian_1d", "--paths", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 201);
    assert!(csv.starts_with("path_id,step,t,x_1,dW_1,log_weight"));
    let m = manifest(dir.path());
    assert_eq!(m["status"], "PASS");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["preset"], "brownian_1d");
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    for c in m["checks"].as_array().unwrap() {
        assert!(c["module"].is_string() && c["operation"].is_string());
    }
}

#[test]
fn same_config_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = gibbsdiff(&["--seed", "11", "--out", d.path().to_str().unwrap(), "fk", "--preset", "case_a_quadratic", "--paths", "500"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["comparison.csv", "estimates.csv", "checks.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn unknown_preset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = gibbsdiff(&["--seed", "1", "--out", dir.path().to_str().unwrap(), "value", "--preset", "no_such_preset"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_preset"));
    assert!(err.contains("\"unknown_preset\""));
}

#[test]
fn module_error_exits_one_with_diagnostic() {
    // killing needs g = 0, and this preset has a terminal cost
    let dir = tempfile::tempdir().unwrap();
    let o = gibbsdiff(&[
        "--seed", "1", "--out", dir.path().to_str().unwrap(), "fk", "--preset", "case_a_quadratic", "--method", "killing",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    let diag: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(diag["error"], "module");
    assert!(diag["message"].as_str().unwrap().contains("precondition"));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gibbsdiff(&["--out", dir.path().to_str().unwrap(), "simulate", "--preset", "brownian_1d"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed is required"));
}

#[test]
fn presets_listing() {
    let o = gibbsdiff(&["presets", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert!(names.len() >= 6);
    for n in ["case_a_quadratic", "follmer_gaussian", "ou_reversal", "two_state_bridge"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "kind = \"value\"\npreset = \"case_a_quadratic\"\nseed = 5\nout = \"{}\"\n\n[value]\nmethod = \"mc\"\n\n[sampling]\npaths = 20000\n",
            out.display()
        ),
    )
    .unwrap();
    let o = gibbsdiff(&["--config", cfg.to_str().unwrap(), "value"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let est = fs::read_to_string(out.join("value_estimate.csv")).unwrap();
    assert!(est.starts_with("method,z,s,value,std_error,n,seed\nmc,0,0,"));
    assert_eq!(manifest(&out)["config"]["sampling"]["paths"], 20000);

    let o = gibbsdiff(&["--config", cfg.to_str().unwrap(), "bridge"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("declares kind"));
}

#[test]
fn bridge_and_reverse_presets_pass() {
    for args in [
        vec!["bridge", "--preset", "two_state_bridge"],
        vec!["bridge", "--preset", "follmer_gaussian", "--paths", "5000"],
        vec!["reverse", "--preset", "brownian_reversal", "--paths", "5000"],
    ] {
        let dir = tempfile::tempdir().unwrap();
        let mut all = vec!["--seed", "3", "-q", "--out", dir.path().to_str().unwrap()];
        all.extend(args.iter());
        let o = gibbsdiff(&all);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stdout));
    }
}
