use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn fpreduce(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpreduce"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

#[test]
fn reduce_writes_one_manifold_per_bias() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpreduce(tmp.path(), &["reduce"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for dl in ["0", "0.01", "0.05", "0.1"] {
        let text = fs::read_to_string(tmp.path().join(format!("manifold_dl{dl}.csv"))).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# delta_lambda="));
        assert_eq!(lines.next().unwrap(), "y,x_star,g,G,minus_G,V");
        assert_eq!(lines.count(), 401);
    }
    assert!(tmp.path().join("gap_sweep.csv").exists());
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(fpreduce(tmp.path(), &["steady"]).status.success());
    let m = manifest(tmp.path());
    assert_eq!(m["command"], "steady");
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for o in outputs {
        let bytes = fs::read(tmp.path().join(o["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(o["sha256"].as_str().unwrap(), digest);
        assert_eq!(o["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn same_seed_gives_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = [
        "sde",
        "--seed",
        "7",
        "--set",
        "n_paths=300",
        "--set",
        "t_end_sde=5",
        "--set",
        "dt_sde=0.01",
    ];
    assert!(fpreduce(a.path(), &args).status.success());
    assert!(fpreduce(b.path(), &[&args[..], &["--threads", "1"]].concat())
        .status
        .success());
    let other = [
        "sde",
        "--seed",
        "8",
        "--set",
        "n_paths=300",
        "--set",
        "t_end_sde=5",
        "--set",
        "dt_sde=0.01",
    ];
    assert!(fpreduce(c.path(), &other).status.success());
    let read = |d: &Path| fs::read(d.join("sde_final.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn unknown_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpreduce(tmp.path(), &["reduce", "--set", "wplus=2.4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wplus"));

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "beta = 0.1\nnot_a_key = 3\n").unwrap();
    let out = fpreduce(&tmp.path().join("o"), &["reduce", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_parameters_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpreduce(tmp.path(), &["reduce", "--set", "beta=-0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_echo_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let cfg = first.path().join("run.cfg");
    fs::write(&cfg, "w_plus = 2.4\ndelta_lambdas = 0.02\n").unwrap();
    assert!(fpreduce(first.path(), &["reduce", "--config", cfg.to_str().unwrap()])
        .status
        .success());
    let echo = first.path().join("echo.json");
    fs::write(&echo, manifest(first.path())["config"].to_string()).unwrap();
    assert!(fpreduce(second.path(), &["reduce", "--config", echo.to_str().unwrap()])
        .status
        .success());
    assert_eq!(manifest(first.path())["config"], manifest(second.path())["config"]);
    let read = |d: &Path| fs::read(d.join("manifold_dl0.02.csv")).unwrap();
    assert_eq!(read(first.path()), read(second.path()));
}

#[test]
fn escape_before_the_pitchfork_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpreduce(tmp.path(), &["escape", "--set", "w_plus=2.0"]);
    assert_eq!(out.status.code(), Some(3));
}
