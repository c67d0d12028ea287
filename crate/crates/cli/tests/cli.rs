use std::fs;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-miso"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn power_min_writes_outputs_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&[
        "power-min",
        "--out",
        out,
        "--mc",
        "400",
        "--seed",
        "7",
        "--targets",
        "0.4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("summary.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mc_seed"], 7);
    assert_eq!(manifest["least_fortunate_user"], 4);
}

#[test]
fn empty_targets_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"mode": "power_min", "targets": []}"#).unwrap();
    let o = cli(&[
        "power-min",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_spec_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, "{ not json").unwrap();
    assert_eq!(
        cli(&["ammse-min", "--spec", spec.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        cli(&["ammse-min", "--spec", "/nonexistent/spec.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn infeasible_target_exits_with_infeasible_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "power-min",
        "--out",
        dir.path().to_str().unwrap(),
        "--mc",
        "200",
        "--targets",
        "0.02",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn spec_file_drives_a_max_ammse_sweep_in_db() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let out = dir.path().join("run");
    fs::write(
        &spec,
        format!(
            r#"{{"mode": "ammse_min", "targets": [-5, 15], "targets_in_db": true, "mc_count": 300, "output_dir": {:?}}}"#,
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = cli(&["ignorant", "--spec", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("ammse_min_ignorant_00_-5.json").exists());
}

#[test]
fn moment_check_with_small_sample_count_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["moment-check", "--out", dir.path().to_str().unwrap(), "--mc", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("moment_check.csv").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
}
