use std::path::Path;
use std::process::{Command, Output};

fn axsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axsym")).args(args).env_remove("AXSYM_WORKERS").output().expect("binary runs")
}

fn p(dir: &Path, f: &str) -> String {
    dir.join(f).to_str().unwrap().to_string()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn end_to_end_pipeline_on_tiny_preset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&axsym(&["gen-synthetic", "--preset", "tiny", "--seed", "11", "--out-dir", d.to_str().unwrap()]));
    let (train, control) = (p(d, "train.bin"), p(d, "control.bin"));
    ok(&axsym(&["fit-bands", "--data", &train, "--control", &control, "--out", &p(d, "bands.json"), "--workers", "2"]));
    let global = ok(&axsym(&[
        "fit-global", "--data", &train, "--control", &control, "--bands", &p(d, "bands.json"), "--out", &p(d, "params.json"),
    ]));
    assert!(global.contains("xi estimate="));
    let mean = ok(&axsym(&[
        "fit-mean", "--data", &train, "--control", &control, "--params", &p(d, "params.json"), "--regions",
        &p(d, "regions.csv"), "--out", &p(d, "mean.json"),
    ]));
    assert!(mean.starts_with("lambda="));
    ok(&axsym(&["emulate", "--mean", &p(d, "mean.json"), "--forcing", &p(d, "heldout_co2.json"), "--out", &p(d, "traj.bin")]));
    let diag = ok(&axsym(&[
        "diagnose", "--data", &p(d, "heldout.bin"), "--control", &control, "--params", &p(d, "params.json"), "--out",
        &p(d, "report.csv"), "--emulated", &p(d, "traj.bin"), "--index-out", &p(d, "index.csv"),
    ]));
    let median: f64 = diag
        .lines()
        .find_map(|l| l.strip_prefix("lack_of_fit_median="))
        .expect("median printed")
        .parse()
        .unwrap();
    assert!(median < 1.2, "median index {median}");
    let acf: f64 = diag.lines().find_map(|l| l.strip_prefix("residual_acf_lag1=")).unwrap().parse().unwrap();
    assert!(acf.abs() < 0.1, "lag-one residual correlation {acf}");
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(report.starts_with("latitude,contrast_name,empirical,model"));
    let index = std::fs::read_to_string(d.join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 6 * 16);
}

#[test]
fn loglik_reports_baseline_and_dense_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&axsym(&["gen-synthetic", "--preset", "tiny", "--seed", "2", "--out-dir", d.to_str().unwrap()]));
    let out = ok(&axsym(&[
        "loglik", "--data", &p(d, "train.bin"), "--control", &p(d, "control.bin"), "--params", &p(d, "truth_params.json"),
        "--dense-check",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["delta_normalized"].as_f64().unwrap() > 0.0);
    assert!(v["loglik"].as_f64().unwrap() > v["ind_loglik"].as_f64().unwrap());
}

#[test]
fn missing_input_exits_2_with_path() {
    let out = axsym(&["loglik", "--data", "/nonexistent/d.bin", "--params", "/nonexistent/p.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/d.bin"));
}

#[test]
fn corrupted_header_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&axsym(&["gen-synthetic", "--preset", "tiny", "--out-dir", d.to_str().unwrap()]));
    let path = d.join("train.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    let out = axsym(&["loglik", "--data", path.to_str().unwrap(), "--params", &p(d, "truth_params.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("header"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(axsym(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(axsym(&["simulate"]).status.code(), Some(1));
    assert_eq!(axsym(&["loglik", "--workers", "0", "--data", "a", "--params", "b"]).status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_axsym"))
        .args(["gen-synthetic", "--out-dir", "x"])
        .env("AXSYM_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(&axsym(&["--help"]));
    for sub in ["fit-bands", "fit-global", "fit-mean", "emulate", "simulate", "gen-synthetic", "diagnose", "loglik", "benchmark"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&axsym(&["gen-synthetic", "--preset", "tiny", "--out-dir", d.to_str().unwrap()]));
    let params: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("truth_params.json")).unwrap()).unwrap();
    let mean: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("truth_mean.json")).unwrap()).unwrap();
    let spec = serde_json::json!({
        "geometry": mean["geometry"],
        "params": params,
        "n_time": 5,
        "n_real": 3,
        "seed": 1,
    });
    std::fs::write(d.join("spec.json"), spec.to_string()).unwrap();
    for name in ["a.bin", "b.bin"] {
        ok(&axsym(&["simulate", "--spec", &p(d, "spec.json"), "--seed", "9", "--out", &p(d, name)]));
    }
    ok(&axsym(&["simulate", "--spec", &p(d, "spec.json"), "--out", &p(d, "c.bin")]));
    let a = std::fs::read(d.join("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.bin")).unwrap());
    assert_ne!(a, std::fs::read(d.join("c.bin")).unwrap());
}

#[test]
fn benchmark_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("sizes.json"), r#"[{"m":2,"n":8,"t":3,"r":2},{"m":2,"n":16,"t":3,"r":2}]"#).unwrap();
    let out = ok(&axsym(&["benchmark", "--sizes", &p(d, "sizes.json"), "--out", &p(d, "bench.csv"), "--reps", "1"]));
    assert!(out.contains("fft_exponent_in_n="));
    assert_eq!(std::fs::read_to_string(d.join("bench.csv")).unwrap().lines().count(), 3);
}
