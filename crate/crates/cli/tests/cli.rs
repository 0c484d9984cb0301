use std::path::Path;
use std::process::{Command, Output};

fn onebit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onebit")).args(args).current_dir(dir).output().expect("binary runs")
}

const SMALL_GRID: &str = "n = 40\nhidden = [20]\nm_values = [40, 80, 160]\ntrials = 3\nls_restarts = 2\nls_steps = 100\n";

#[test]
fn grid_writes_the_documented_header_and_fit_prints_one_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.cfg"), SMALL_GRID).unwrap();
    let out = onebit(dir.path(), &["grid", "--config", "g.cfg", "--seed", "7", "--out", "r.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "m,decoder,trial,seed,l2_err,cosine,per_pixel,runtime_s,converged");
    assert_eq!(csv.lines().count(), 1 + 3 * 3 * 3);

    let fit = onebit(dir.path(), &["fit", "--in", "r.csv", "--decoder", "ls"]);
    assert!(fit.status.success());
    let stdout = String::from_utf8(fit.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let record: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    for key in ["slope", "intercept", "r2"] {
        assert!(record[key].is_f64(), "missing {key} in {stdout}");
    }
}

#[test]
fn validate_srec_prints_a_pass_rate_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = onebit(dir.path(), &["validate", "srec", "--m", "400", "--k", "5", "--pairs", "500", "--runs", "3", "--quiet"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["m"], 400);
    assert_eq!(report["pass_rate"]["runs"], 3);
    assert!(out.stderr.is_empty());
}

#[test]
fn exit_codes_separate_usage_from_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = onebit(dir.path(), &["measure", "--no-such-flag"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(onebit(dir.path(), &["decode", "--measurements", "missing"]).status.code(), Some(1));
    assert_eq!(onebit(dir.path(), &["memorize", "--max-width", "3"]).status.code(), Some(2));
    assert_eq!(onebit(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn explicit_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "m = 150\nhidden = [30, 30]\nquiet = true\n").unwrap();
    let out = onebit(dir.path(), &["measure", "--config", "c.toml", "--m", "120", "--out", "meas"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
    let ens = onebit_core::measurement::MeasurementEnsemble::load(dir.path().join("meas/ensemble.bin")).unwrap();
    assert_eq!((ens.m(), ens.n()), (120, 100));
}

#[test]
fn decode_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["synth-gen", "--seed", "1", "--out", "g.json", "--text", "--quiet"][..],
        &["measure", "--generator", "g.json", "--m", "300", "--seed", "2", "--out", "meas", "--quiet"],
        &["decode", "--generator", "g.json", "--measurements", "meas", "--seed", "3", "--out", "d.json", "--quiet"],
    ] {
        let out = onebit(dir.path(), args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(d["x_hat"].as_array().unwrap().len(), 100);
    assert!(d["l2_err"].as_f64().unwrap() < 1.0);
}
