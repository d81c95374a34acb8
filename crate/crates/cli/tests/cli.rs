//! End-to-end checks of the command-line surface: exit codes,
//! artifact shapes, config-file overrides and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sigma-mlmc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn missing_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate", "--payoff", "x2", "--n", "8", "--m", "2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--model"), "stderr: {stderr}");
}

#[test]
fn non_power_resolution_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "rates", "--model", "clark-cameron", "--m", "2", "--n-grid", "8,10,32,64", "--R", "200",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_payoff_and_weights_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate", "--model", "clark-cameron", "--payoff", "nope", "--n", "8", "--m", "2",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "estimate", "--model", "clark-cameron", "--payoff", "x2", "--n", "8", "--m", "2",
        "--weights", "quadratic", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn tiny_replicate_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "noise", "--m", "2", "--q", "2", "--n", "8", "--R", "1", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn degenerate_clt_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "clt", "--model", "clark-cameron", "--payoff", "const", "--n", "4", "--m", "2",
        "--kappa", "0.5", "--R", "200", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("degenerate"), "stderr: {stderr}");
}

#[test]
fn estimate_writes_plan_and_costs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate", "--model", "clark-cameron", "--payoff", "x2", "--n", "16", "--m", "2",
        "--alpha", "1", "--weights", "unit", "--kappa", "1", "--seed", "3", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mlmc.json")).unwrap())
            .unwrap();
    assert_eq!(doc["plan"]["sample_sizes"], serde_json::json!([1024, 1024, 256, 64, 16]));
    assert_eq!(doc["paper_cost_units"], serde_json::json!(9600.0));
    assert_eq!(doc["total_cost_units"], serde_json::json!(10624.0));
    assert_eq!(doc["seed"], serde_json::json!(3));
    assert_eq!(doc["condition_w_violated"], serde_json::json!(false));
    let csv = std::fs::read_to_string(dir.path().join("mlmc.csv")).unwrap();
    assert!(csv.starts_with("ell,N,mean,variance,cost_units\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn optimal_weights_carry_the_condition_w_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate", "--model", "clark-cameron", "--payoff", "x2", "--n", "8", "--m", "2",
        "--weights", "optimal", "--kappa", "0.2", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mlmc.json")).unwrap())
            .unwrap();
    assert_eq!(doc["condition_w_violated"], serde_json::json!(true));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("weight condition"), "stderr: {stderr}");
}

#[test]
fn reruns_reproduce_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "estimate", "--model", "trig-2d", "--payoff", "x2sq", "--n", "8", "--m", "2",
        "--kappa", "0.3", "--seed", "17", "--out", dir.path().to_str().unwrap(),
    ];
    assert_eq!(code(&run(&args)), 0);
    let first = std::fs::read(dir.path().join("mlmc.json")).unwrap();
    assert_eq!(code(&run(&args)), 0);
    let second = std::fs::read(dir.path().join("mlmc.json")).unwrap();
    assert_eq!(first, second);

    // Thread count must not leak into the numbers.
    let single = bin()
        .args(args)
        .env("SIGMA_MLMC_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&single), 0);
    let third: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mlmc.json")).unwrap())
            .unwrap();
    let mut base: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let mut third = third;
    base["config"]["threads"] = serde_json::json!(0);
    third["config"]["threads"] = serde_json::json!(0);
    assert_eq!(base, third);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    std::fs::write(
        &config_path,
        "model = \"clark-cameron\"\npayoff = \"x2\"\nn = 8\nm = 2\nkappa = 1.0\nseed = 5\n",
    )
    .unwrap();
    let out = run(&[
        "--config", config_path.to_str().unwrap(), "estimate", "--kappa", "0.25", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mlmc.json")).unwrap())
            .unwrap();
    assert_eq!(doc["config"]["kappa"], serde_json::json!(0.25));
    assert_eq!(doc["config"]["n"], serde_json::json!(8));
    assert_eq!(doc["config"]["seed"], serde_json::json!(5));

    // Unknown keys are rejected.
    std::fs::write(&config_path, "modell = \"typo\"\n").unwrap();
    let out = run(&[
        "--config", config_path.to_str().unwrap(), "models", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn noise_writes_csv_and_grid_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "noise", "--m", "2", "--q", "2", "--n", "8", "--R", "2000", "--dump-grid", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("noise.csv")).unwrap();
    assert!(csv.starts_with("component,empirical_var,theoretical_var,stderr\n"));
    // All z1 (8) + z2 (4) + z3 (8) components for q = 2.
    assert_eq!(csv.lines().count(), 21);
    // Limit variances at m = 2: 1/4 off-diagonal z1, 1/2 diagonal z1
    // and off-diagonal z2, 0 for the structural zeros.
    let theoretical: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    for expected in [0.25, 0.5, 0.0] {
        assert!(
            theoretical.iter().any(|&t| t == expected),
            "theoretical column {theoretical:?} missing {expected}"
        );
    }
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert!(grid.starts_with("i,k,j,delta\n"));
    assert_eq!(grid.lines().count(), 1 + 8 * 2 * 2);
}

#[test]
fn rates_emits_points_and_paths_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "rates", "--model", "additive-2d", "--m", "2", "--n-grid", "2,4,8,16", "--R", "150",
        "--dump-paths", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n,rms_u,rms_v");
    assert_eq!(csv.lines().count(), 5);
    let paths = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert!(paths.starts_with("leg,i,t,x_1,x_2\n"));
    // Three legs, n = 2 coarse times plus the initial state each.
    assert_eq!(paths.lines().count(), 1 + 3 * 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("zero to rounding"), "stdout: {stdout}");
}

#[test]
fn ablation_identity_permutation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "ablation", "--model", "clark-cameron", "--m", "3", "--n-grid", "3,9", "--R", "100",
        "--perms", "1,2,3", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn complexity_writes_sweep_and_condition_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "complexity", "--m", "2", "--n-grid", "2^4..2^8", "--weights", "unit,optimal", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("complexity.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "family,n,paper_cost,cost_over_n2");
    assert_eq!(csv.lines().count(), 11); // 2 families x 5 resolutions
    assert!(Path::new(&dir.path().join("weight_condition.csv")).exists());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("complexity.json")).unwrap())
            .unwrap();
    assert_eq!(doc["weight_condition"][1]["violates_condition_w"], serde_json::json!(true));
}

#[test]
fn models_lists_registry() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["models", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for id in ["clark-cameron", "additive-2d", "trig-2d", "gbm-1d"] {
        assert!(stdout.contains(id));
    }
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("models.json")).unwrap())
            .unwrap();
    assert_eq!(doc["models"].as_array().unwrap().len(), 4);
}
