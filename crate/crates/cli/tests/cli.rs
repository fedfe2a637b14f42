use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spore_cli::config::parse_config;
use spore_cli::output::{CURVE_HEADER, SAMPLE_HEADER};

const LF: &str = r#""model": {"beta": 1, "rho": 0, "offspring": {"kind": "table", "probs": [0.6, 0, 0.4]}}"#;

fn spore(args: &[&str], config: Option<&Path>, out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spore"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    if let Some(o) = out {
        cmd.arg("--out-dir").arg(o);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        parse_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn survival_csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(r#"{{{LF}, "experiment": {{"kind": "survival", "k": [1, 2], "t_max": 2, "t_step": 0.5}}}}"#),
    );
    let out = tmp.path().join("out");
    let res = spore(&["run"], Some(&cfg), Some(&out));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("survival.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 10);
    for row in &rows {
        let k: u32 = row[0].parse().unwrap();
        let t: f64 = row[1].parse().unwrap();
        let q: f64 = row[2].parse().unwrap();
        assert_eq!(row[4], "ode");
        if k == 1 {
            let exact = 0.2 * (-0.2 * t).exp() / (0.6 - 0.4 * (-0.2 * t).exp());
            assert!((q - exact).abs() < 1e-8);
        }
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("survival.json")).unwrap()).unwrap();
    assert_eq!(meta["metadata"]["rng_algorithm"], spore_core::rng::RNG_ALGORITHM);
    assert_eq!(meta["metadata"]["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["result"]["scaled_monotonicity"]["nonincreasing"], true);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn gumbel_samples_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(r#"{{{LF}, "experiment": {{"kind": "gumbel", "z": {{"1": 200}}, "replicates": 50, "seed": 1}}}}"#),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(spore(&["run"], Some(&cfg), Some(&a)).status.success());
    assert!(spore(&["run", "--seed", "2"], Some(&cfg), Some(&b)).status.success());
    let sa = fs::read_to_string(a.join("extinction_times.csv")).unwrap();
    let sb = fs::read_to_string(b.join("extinction_times.csv")).unwrap();
    assert!(sa.starts_with(SAMPLE_HEADER));
    assert_eq!(sa.lines().count(), 51);
    assert_ne!(sa, sb);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("gumbel.json")).unwrap()).unwrap();
    assert_eq!(meta["metadata"]["seed"], 2);
    assert_eq!(meta["result"]["c_source"], "closed_form");
}

#[test]
fn randomized_run_without_seed_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(r#"{{{LF}, "experiment": {{"kind": "gumbel", "z": {{"1": 50}}, "replicates": 5}}}}"#),
    );
    let out = tmp.path().join("out");
    let res = spore(&["run"], Some(&cfg), Some(&out));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("experiment.seed"));
    assert!(!out.exists());
    let res = spore(&["run", "--ephemeral"], Some(&cfg), Some(&out));
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("seed: "));
}

#[test]
fn config_errors_exit_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"beta": 1, "rho": 0, "offspring": {"kind": "table", "probs": [0, 0, 1]}},
            "experiment": {"kind": "gumbel", "z": {"1": 10}, "seed": 1}}"#,
    );
    let res = spore(&["run"], Some(&cfg), Some(&tmp.path().join("out")));
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("model: ") && stderr.contains("subcritical"), "{stderr}");
}

#[test]
fn budget_exhaustion_exits_4_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{{LF}, "experiment": {{"kind": "gumbel", "z": {{"1": 1000}}, "replicates": 3, "seed": 1, "max_events": 100}}}}"#
        ),
    );
    let out = tmp.path().join("out");
    let res = spore(&["run"], Some(&cfg), Some(&out));
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

#[test]
fn unwritable_output_exits_1_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!(r#"{{{LF}, "experiment": {{"kind": "slope"}}}}"#));
    let out = tmp.path().join("out");
    fs::create_dir(&out).unwrap();
    // A directory where the second artifact should go makes that write fail.
    fs::create_dir(out.join("slope_curve.csv")).unwrap();
    let res = spore(&["run"], Some(&cfg), Some(&out));
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.join("slope.json").exists());
    assert!(!spore(&["run"], Some(&tmp.path().join("missing.json")), None).status.success());
}

#[test]
fn oracle_table_passes_for_linear_fractional() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!(r#"{{{LF}, "experiment": {{"kind": "oracle"}}}}"#));
    let out = tmp.path().join("out");
    let res = spore(&["run"], Some(&cfg), Some(&out));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(table.contains("\nconstant,"));
}

#[test]
fn unattainable_oracle_tolerance_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(r#"{{{LF}, "experiment": {{"kind": "oracle", "t": [1, 2], "tol": 1e-18}}}}"#),
    );
    let out = tmp.path().join("out");
    let res = spore(&["run"], Some(&cfg), Some(&out));
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn validate_reports_hypotheses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!(r#"{{{LF}, "experiment": {{"kind": "constant"}}}}"#));
    let res = spore(&["validate"], Some(&cfg), None);
    assert!(res.status.success());
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!((report["lambda"].as_f64().unwrap() - 0.2).abs() < 1e-12);
}
