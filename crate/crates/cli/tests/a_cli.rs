use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roughbridge::io::{read_csv_rows, read_jsonl, read_rough_path, EnsembleMetadata};
use roughbridge::ldp::{TailRow, VaradhanRow};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughbridge"))
}

fn run_cmd(sub: &str, config: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{sub}.json"));
    fs::write(&cfg, config).unwrap();
    bin()
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SAMPLE: &str = r#"{"seed": 17, "sample": {"hurst": [0.5], "level": 8, "n_paths": 10}}"#;

#[test]
fn sample_writes_ensemble_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd("sample", SAMPLE, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: EnsembleMetadata = roughbridge::io::read_json(dir.path().join("out/ensemble.json")).unwrap();
    assert_eq!((meta.n_paths, meta.level, meta.seed), (10, 8, 17));
    let (_, paths) = roughbridge_cli::commands::load_ensemble(&dir.path().join("out/ensemble.json")).unwrap();
    assert_eq!(paths.len(), 10);
    assert!(paths.iter().all(|p| p.n_intervals() == 256 && p.start() == [0.0]));
    let csv = fs::read_to_string(dir.path().join("out/ensemble.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_hash={} seed=17", meta.config_hash)));
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_cmd("sample", SAMPLE, a.path(), &[]).status.success());
    assert!(run_cmd("sample", SAMPLE, b.path(), &["--threads", "2"]).status.success());
    let read = |d: &Path| fs::read(d.join("out/ensemble.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let c = tempfile::tempdir().unwrap();
    assert!(run_cmd("sample", SAMPLE, c.path(), &["--seed", "18"]).status.success());
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn invalid_hurst_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd(
        "sample",
        r#"{"seed": 1, "sample": {"hurst": [1.2], "level": 4, "n_paths": 2}}"#,
        dir.path(),
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample.hurst[0]"));
}

#[test]
fn unknown_keys_and_missing_seed_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd("sample", r#"{"seed": 1, "sample": {"hurst": [0.5], "level": 4, "n_paths": 2, "colour": 1}}"#, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_cmd("sample", r#"{"sample": {"hurst": [0.5], "level": 4, "n_paths": 2}}"#, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let missing = bin().args(["rate", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn lift_polygon_converges_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd(
        "lift",
        r#"{"seed": 2, "lift": {"source": {"kind": "polygon", "dim": 2, "level": 8}, "mode": {"kind": "holder", "alpha": 0.4}, "tol": 1e-9}}"#,
        dir.path(),
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = read_jsonl(fs::File::open(dir.path().join("out/lift.jsonl")).unwrap()).unwrap();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["exact_convergence"], Value::Bool(true));
    let (h, x) = read_rough_path(fs::File::open(dir.path().join("out/rough/path_00000.rgh")).unwrap()).unwrap();
    assert_eq!(h.seed, Some(2));
    assert_eq!(x.dim(), 2);
}

#[test]
fn lift_fbm_ensemble_pools_rates_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    let sample = r#"{"seed": 5, "sample": {"hurst": [0.5, 0.5], "level": 9, "n_paths": 12}}"#;
    assert!(run_cmd("sample", sample, dir.path(), &[]).status.success());
    let meta = dir.path().join("out/ensemble.json");
    let cfg = format!(
        r#"{{"seed": 5, "lift": {{"source": {{"kind": "ensemble", "metadata": "{}"}}, "mode": {{"kind": "holder", "alpha": 0.3}}, "tol": 1e-12}}}}"#,
        meta.display()
    );
    let out = run_cmd("lift", &cfg, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = read_jsonl(fs::File::open(dir.path().join("out/lift.jsonl")).unwrap()).unwrap();
    assert_eq!(lines.len(), 12);
    let pooled = json(&dir.path().join("out/cauchy.json"));
    let kappa = pooled["fit"]["kappa"].as_f64().unwrap();
    assert!(kappa > 0.0 && kappa < 1.0, "kappa = {kappa}");

    let cfg = cfg.replace("0.3}", "0.55}");
    let out = run_cmd("lift", &cfg, dir.path(), &[]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diagnostic regime"));
}

#[test]
fn solve_runs_young_and_rough_regimes() {
    for h in ["0.7", "0.4"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!(
            r#"{{"seed": 9, "solve": {{"fields": {{"kind": "trig_test", "dim": 2}}, "a": [0.1, 0.2], "hurst": [{h}, {h}], "level": 7, "n_paths": 3}}}}"#
        );
        let out = run_cmd("solve", &cfg, dir.path(), &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let (_, paths) = roughbridge_cli::commands::load_ensemble(&dir.path().join("out/solutions.json")).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(paths[0].start(), [0.1, 0.2]);
    }
}

#[test]
fn bridge_command_matches_module_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 4, "bridge": {"model": {"kind": "brownian", "diffusion": [[1.0]]}, "a": [0.0], "b": [0.5], "level": 6, "n_paths": 20000, "sigma": 0.1, "n_boot": 50, "n_exact": 5000}}"#;
    let out = run_cmd("bridge", cfg, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&dir.path().join("out/bridge.json"));
    let comps = rep["comparisons"].as_array().unwrap();
    assert_eq!(comps.len(), 4);
    for c in &comps[..3] {
        let err = (c["weighted_mean"].as_f64().unwrap() - c["exact_mean"].as_f64().unwrap()).abs();
        assert!(err <= 0.1 + 4.0 * c["mean_se"].as_f64().unwrap(), "{c}");
    }
    let w: Vec<(usize, f64)> = read_csv_rows(fs::File::open(dir.path().join("out/weights.csv")).unwrap()).unwrap();
    assert_eq!(w.len(), 20000);
    assert!((w.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn rate_command_reproduces_scalar_formula() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 1, "rate": {"fields": {"kind": "identity", "dim": 1}, "a": [0.0], "b": [2.0], "hurst": [0.7], "horizon": 2.0}}"#;
    let out = run_cmd("rate", cfg, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("out/rate.json"));
    let want = 4.0 / (2.0 * 2f64.powf(1.4));
    assert!((r["value"].as_f64().unwrap() - want).abs() < 1e-6);
    assert!(r["config_hash"].as_str().unwrap().len() == 64);
}

const VARADHAN: &str = r#"{"seed": 3, "varadhan": {"problem": {"fields": {"kind": "identity", "dim": 1}, "a": [0.0], "b": [1.0], "hurst": [0.5]}, "epsilons": [0.5, 0.25], "n_paths": 4000, "level": 4, "bandwidth_factor": 0.05, "importance": "always", "beta": {"kind": "constant", "value": 0.0}}}"#;

#[test]
fn varadhan_command_writes_rows_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd("varadhan", VARADHAN, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<VaradhanRow> = read_csv_rows(fs::File::open(dir.path().join("out/varadhan.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.importance && r.p_hat > 0.0));
    let meta = json(&dir.path().join("out/varadhan.json"));
    assert!((meta["rate"].as_f64().unwrap() - 0.5).abs() < 1e-6);

    let empty = VARADHAN.replace("[0.5, 0.25]", "[]");
    let out = run_cmd("varadhan", &empty, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("varadhan.epsilons"));
}

#[test]
fn csv_bodies_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_cmd("varadhan", VARADHAN, a.path(), &[]).status.success());
    assert!(run_cmd("varadhan", VARADHAN, b.path(), &["--threads", "1"]).status.success());
    let read = |d: &Path| fs::read(d.join("out/varadhan.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn probe_tail_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 8, "probe_tail": {"hurst": [0.5], "mode": {"kind": "holder", "alpha": 0.4}, "radii": [0.0, 1.0, 1.5, 2.0, 2.5, 3.0], "level": 6, "n_paths": 2000}}"#;
    let out = run_cmd("probe-tail", cfg, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<TailRow> = read_csv_rows(fs::File::open(dir.path().join("out/tail.csv")).unwrap()).unwrap();
    assert_eq!(rows[0].probability, 1.0);
    assert!(rows.windows(2).all(|w| w[1].probability <= w[0].probability));
    let slope = json(&dir.path().join("out/tail.json"))["slope"].as_f64();
    assert!(slope.is_none_or(|s| s < 0.0));
}

#[test]
fn selftest_passes_and_is_deterministic() {
    let a = bin().args(["selftest", "--seed", "11"]).output().unwrap();
    let b = bin().args(["selftest", "--seed", "11", "--threads", "3"]).output().unwrap();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    assert!(!String::from_utf8_lossy(&a.stdout).contains("FAIL"));
}
