//! End-to-end checks of the command-line binary: output determinism, exit
//! codes and file formats.

use std::fs;
use std::process::{Command, Output};

fn czsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_czsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn spectrum_output_is_byte_identical_across_runs() {
    let a = czsim(&["spectrum"]);
    let b = czsim(&["spectrum"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["meta"]["seed"], 0);
    assert!(v["meta"]["config_sha256"].as_str().unwrap().len() == 64);
    assert!(v["result"]["chi12_ghz"].as_f64().unwrap() < 0.0);
}

#[test]
fn seed_and_config_change_the_hash() {
    let a = czsim(&["spectrum"]);
    let b = czsim(&["--seed", "1", "spectrum"]);
    let va: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let vb: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_ne!(va["meta"]["config_sha256"], vb["meta"]["config_sha256"]);
}

#[test]
fn chi_sweep_writes_csv_with_pinned_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = czsim(&[
        "--out",
        path.to_str().unwrap(),
        "chi-sweep",
        "--from-ghz",
        "6.5",
        "--to-ghz",
        "7.0",
        "--points",
        "6",
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# czsim"));
    assert_eq!(
        lines.next().unwrap(),
        "coupler_frequency_GHz,chi12_GHz,label_overlap,flags"
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = czsim(&["--config", "/nonexistent/config.json", "spectrum"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn malformed_config_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    let out = czsim(&["--config", path.to_str().unwrap(), "spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn invalid_sweep_bounds_are_a_configuration_error() {
    let out = czsim(&["chi-sweep", "--from-ghz", "7.0", "--to-ghz", "6.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn error_budget_without_noise_is_a_configuration_error() {
    let out = czsim(&["error-budget"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise"));
}

#[test]
fn rb_with_too_few_lengths_is_a_computation_error() {
    let out = czsim(&[
        "rb",
        "--lengths",
        "1,4",
        "--sequences",
        "2",
        "--dt-ns",
        "0.1",
        "--bootstrap-resamples",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn calibrate_exports_waveform() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("wf.csv");
    let out = czsim(&[
        "calibrate",
        "--dt-ns",
        "0.02",
        "--waveform",
        wf.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let amp = v["result"]["pulse"]["amplitude_phi0"].as_f64().unwrap();
    assert!(amp > 0.28 && amp < 0.33);
    let text = fs::read_to_string(&wf).unwrap();
    assert!(text.starts_with("time_ns,flux_phi0,coupler_frequency_GHz"));
    // half sine: starts and ends at zero flux
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let first: f64 = rows.first().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let last: f64 = rows.last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(first.abs() < 1e-9 && last.abs() < 1e-6);
}

#[test]
fn crosstalk_with_explicit_amplitude() {
    let a = czsim(&["crosstalk", "--amplitude-phi0", "0.3", "--fraction", "0.1"]);
    assert!(a.status.success());
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let khz = v["result"]["chi12_shift_khz"].as_f64().unwrap();
    assert!(khz > 0.0 && khz < 1.0, "shift = {khz} kHz");
}
