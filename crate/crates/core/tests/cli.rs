//! End-to-end checks of the command-line binary: outputs and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satdfrc::ScenarioConfig;

fn small_config(dir: &Path) -> PathBuf {
    let cfg = ScenarioConfig {
        n_feeds: 4,
        n_users: 4,
        n_rx: 4,
        rate_threshold_bps_hz: 2.0,
        ..ScenarioConfig::default()
    };
    let p = dir.join("small.cfg");
    std::fs::write(&p, cfg.to_config_string()).unwrap();
    p
}

fn satdfrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satdfrc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_strategy_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = satdfrc(&["optimize", "--config", s(&cfg), "--strategy", "noma"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    std::fs::write(&p, "n_feeds = 4\nbogus_key = 3\n").unwrap();
    let o = satdfrc(&["validate", "--config", s(&p)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
}

#[test]
fn unreachable_threshold_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = satdfrc(&["optimize", "--config", s(&cfg), "--rth", "50"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validate_passes_on_small_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = satdfrc(&["validate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn optimize_then_estimate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let design = dir.path().join("design");
    let o = satdfrc(&["optimize", "--config", s(&cfg), "--out", s(&design)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["rcrb_theta_deg"].as_f64().unwrap() > 0.0);
    assert!(summary["rcrb_phi_deg"].as_f64().unwrap() > 0.0);
    let result = design.join("optimization.json");
    assert!(result.exists());

    let est = dir.path().join("est");
    let o = satdfrc(&[
        "estimate",
        "--config",
        s(&cfg),
        "--beamformers",
        s(&result),
        "--seed",
        "3",
        "--out",
        s(&est),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((e["theta_hat_deg"].as_f64().unwrap() - 45.0).abs() < 2.0);
    for f in ["estimation.json", "grid.json", "spectrum.csv"] {
        assert!(est.join(f).exists(), "{f} missing");
    }
}

#[test]
fn sweep_writes_tagged_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let o = satdfrc(&[
        "sweep",
        "--config",
        s(&cfg),
        "--values",
        "1,50",
        "--strategy",
        "rsma",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rcrb_rth.csv")).unwrap();
    assert!(csv.starts_with("# scenario_hash="));
    assert!(csv.contains("infeasible"));
    assert!(out.join("rcrb_rth.json").exists());
}
