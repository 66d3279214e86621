use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use temperflow_harness::config::ExperimentConfig;
use temperflow_harness::output::write_outputs;
use temperflow_harness::run_experiment;

const SMALL: &str = r#"
experiment = "gmm2d"
seed = 5
replications = 2
n_samples = 200
methods = ["mh", "pt"]

[[targets]]
kind = "gmm2d"
layout = "circle"

[mcmc]
burnin = 50
"#;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("temperflow-harness-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn metrics_are_reproducible_byte_for_byte() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let (a, b) = (scratch("a"), scratch("b"));
    for dir in [&a, &b] {
        let report = run_experiment(&cfg).unwrap();
        write_outputs(dir, &cfg, &report).unwrap();
    }
    let csv = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    for dir in [a, b] {
        fs::remove_dir_all(dir).unwrap();
    }
}

#[test]
fn seed_changes_metrics() {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let first = run_experiment(&cfg).unwrap();
    cfg.seed += 1;
    let second = run_experiment(&cfg).unwrap();
    assert_ne!(first.metrics[0].adj_w1, second.metrics[0].adj_w1);
}

#[test]
fn cli_validate_reports_errors() {
    let bin = env!("CARGO_BIN_EXE_temperflow");
    let ok = Command::new(bin)
        .args(["validate", configs_dir().join("gmm2d.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("ok (gmm2d"));

    let dir = scratch("bad");
    fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.toml");
    fs::write(&bad, SMALL.replace("replications = 2", "replications = 2\nreplicates = 3")).unwrap();
    let out = Command::new(bin).args(["validate", bad.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("replicates"), "{err}");

    fs::write(&bad, "").unwrap();
    let out = Command::new(bin).args(["validate", bad.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn cli_run_writes_outputs() {
    let dir = scratch("run");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_temperflow"))
        .args(["run", cfg.to_str().unwrap(), "--replications", "1", "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "metrics.csv", "timings.csv", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["replications"], 1);
    fs::remove_dir_all(dir).unwrap();
}
