use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 3
[paths]
data = "data.csv"
out_dir = "out"
[simulate]
n = 400
[train]
max_epochs = 15
[eval]
draws = 60
"#;

fn sfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfm"))
        .args(args)
        .env_remove("SFM_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sfm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn workspace() -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    (dir, cfg)
}

fn pipeline(cfg: &str) {
    for cmd in ["simulate", "train", "evaluate"] {
        ok(&["--config", cfg, cmd]);
    }
}

#[test]
fn pipeline_produces_complete_report() {
    let (dir, cfg) = workspace();
    pipeline(&cfg);
    let out = dir.path().join("out");
    assert!(dir.path().join("data.oracle.json").is_file());
    assert!(out.join("checkpoint.json").is_file());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,valid_loss\n"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    for key in [
        "c_index",
        "calibration_slope",
        "calibration_points",
        "mean_cov",
        "coverage95",
        "wasserstein_events",
        "medians",
        "cov",
    ] {
        let v = &report[key];
        assert!(!v.is_null(), "{key} missing");
        if let Some(a) = v.as_array() {
            assert!(!a.is_empty(), "{key} empty");
        }
    }
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let read = |dir: &Path, name: &str| fs::read(dir.join("out").join(name)).unwrap();
    let (a, cfg_a) = workspace();
    let (b, cfg_b) = workspace();
    pipeline(&cfg_a);
    pipeline(&cfg_b);
    for name in ["checkpoint.json", "history.csv", "eval_report.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn curves_without_checkpoint_export_km_only() {
    let (dir, cfg) = workspace();
    ok(&["--config", &cfg, "simulate"]);
    ok(&["--config", &cfg, "curves", "--svg"]);
    let out = dir.path().join("out");
    let km = fs::read_to_string(out.join("km.csv")).unwrap();
    assert!(km.starts_with("time,survival,lower,upper\n"));
    assert_eq!(km.lines().count() - 1, {
        let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
        let mut times: Vec<f64> = data
            .lines()
            .skip(1)
            .map(|l| l.split(',').rev().nth(1).unwrap().parse().unwrap())
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times.len()
    });
    assert!(!out.join("dkm.csv").exists());
    assert!(fs::read_to_string(out.join("curves.svg")).unwrap().contains("<svg"));
}

#[test]
fn calibration_writes_points_and_diagonal() {
    let (dir, cfg) = workspace();
    pipeline(&cfg);
    let stdout = String::from_utf8(ok(&["--config", &cfg, "calibration", "--svg"]).stdout).unwrap();
    let slope: f64 = stdout.trim().strip_prefix("calibration_slope ").unwrap().parse().unwrap();
    assert!(slope.is_finite());
    let out = dir.path().join("out");
    assert!(fs::read_to_string(out.join("calibration.csv")).unwrap().starts_with("km_cdf,dkm_cdf\n"));
    assert!(fs::read_to_string(out.join("calibration.svg")).unwrap().contains("unit slope"));
}

#[test]
fn out_flag_overrides_environment() {
    let (dir, cfg) = workspace();
    ok(&["--config", &cfg, "simulate"]);
    let env_dir = dir.path().join("env");
    let flag_dir = dir.path().join("flag");
    let status = Command::new(env!("CARGO_BIN_EXE_sfm"))
        .args(["--config", &cfg, "curves"])
        .env("SFM_OUT_DIR", &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(env_dir.join("km.csv").is_file());
    let status = Command::new(env!("CARGO_BIN_EXE_sfm"))
        .args(["--config", &cfg, "--out", flag_dir.to_str().unwrap(), "curves"])
        .env("SFM_OUT_DIR", &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag_dir.join("km.csv").is_file());
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    err.trim().to_string()
}

#[test]
fn missing_config_exits_with_config_category() {
    let out = sfm(&["--config", "/definitely/not/here.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[config]: "));
}

#[test]
fn evaluate_without_checkpoint_is_config_error() {
    let (_dir, cfg) = workspace();
    ok(&["--config", &cfg, "simulate"]);
    let out = sfm(&["--config", &cfg, "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).contains("checkpoint"));
}

#[test]
fn malformed_data_is_runtime_failure() {
    let (dir, cfg) = workspace();
    fs::write(dir.path().join("data.csv"), "x1,time,event\n1.0,abc,1\n").unwrap();
    let out = sfm(&["--config", &cfg, "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error[data]: "));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = sfm(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[usage]: "));
}
