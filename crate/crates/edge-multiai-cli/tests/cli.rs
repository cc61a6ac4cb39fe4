//! End-to-end tests of the command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edge-multiai"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .env_remove("EDGE_MULTIAI_OUT")
        .output()
        .expect("binary runs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("edge_multiai_cli_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// A scenario small enough for fast CLI runs.
fn small_scenario_json(dir: &Path) -> PathBuf {
    let mut cfg = edge_multiai::domain::default_scenario::<f64>();
    cfg.requests_per_app = 20;
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = tmp_dir("run");
    let cfg = small_scenario_json(&dir);
    let out = run_in(
        &dir,
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            "iws-bfe",
            "--seed",
            "42",
            "--out",
            dir.join("results").to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{out:?}");
    for file in [
        "report.json",
        "report.csv",
        "run_log.jsonl",
        "run_log.csv",
        "workload.csv",
    ] {
        assert!(dir.join("results").join(file).exists(), "missing {file}");
    }
    // Seed and config hash embedded in every output.
    for file in ["report.csv", "run_log.csv", "workload.csv"] {
        let text = fs::read_to_string(dir.join("results").join(file)).unwrap();
        assert!(text.contains("seed=42"), "{file} lacks the seed");
        assert!(text.contains("config_sha256="), "{file} lacks the hash");
    }
    let jsonl = fs::read_to_string(dir.join("results/run_log.jsonl")).unwrap();
    let first_line = jsonl.lines().next().unwrap();
    assert!(first_line.contains("\"seed\":42"));
    assert!(first_line.contains("config_sha256"));
}

#[test]
fn malformed_config_exits_two_with_byte_offset() {
    let dir = tmp_dir("badcfg");
    let path = dir.join("broken.json");
    fs::write(&path, "{\"applications\": [{\"app_id\": }").unwrap();
    let out = run_in(&dir, &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("byte offset"), "{stderr}");
}

#[test]
fn invalid_scenario_values_exit_two() {
    let dir = tmp_dir("badvals");
    let mut cfg = edge_multiai::domain::default_scenario::<f64>();
    cfg.deviation = 3.0;
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = run_in(&dir, &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tmp_dir("determinism");
    let cfg = small_scenario_json(&dir);
    for out_name in ["a", "b"] {
        let out = run_in(
            &dir,
            &[
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                "7",
                "--out",
                dir.join(out_name).to_str().unwrap(),
            ],
        );
        assert!(out.status.success());
    }
    for file in [
        "report.json",
        "report.csv",
        "run_log.jsonl",
        "run_log.csv",
        "workload.csv",
    ] {
        let a = fs::read(dir.join("a").join(file)).unwrap();
        let b = fs::read(dir.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn flag_overrides_beat_config_values() {
    let dir = tmp_dir("precedence");
    let cfg = small_scenario_json(&dir); // policy iws-bfe in the file
    let out = run_in(
        &dir,
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            "lfe",
            "--out",
            dir.join("results").to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let report = fs::read_to_string(dir.join("results/report.json")).unwrap();
    assert!(report.contains("\"policy\": \"lfe\""));
}

#[test]
fn env_var_sets_default_output_root() {
    let dir = tmp_dir("envout");
    let cfg = small_scenario_json(&dir);
    let out = bin()
        .args(["run", "--config", cfg.to_str().unwrap()])
        .current_dir(&dir)
        .env("EDGE_MULTIAI_OUT", dir.join("from_env").to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("from_env/report.json").exists());
}

#[test]
fn sweep_produces_expected_run_count_and_tables() {
    let dir = tmp_dir("sweep");
    let mut cfg = edge_multiai::domain::default_scenario::<f64>();
    cfg.requests_per_app = 10;
    let spec = serde_json::json!({
        "axis": "deviation",
        "values": [0.0, 0.3, 0.6, 0.9],
        "policies": ["none", "lfe", "bfe", "ws-bfe", "iws-bfe"],
        "repetitions": 2,
        "base": cfg,
    });
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = run_in(
        &dir,
        &[
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
            "--jobs",
            "2",
        ],
    );
    assert!(out.status.success(), "{out:?}");
    // 4 values x 5 policies x 2 repetitions.
    let runs: Vec<_> = fs::read_dir(dir.join("out/runs")).unwrap().collect();
    assert_eq!(runs.len(), 40);
    assert!(dir.join("out/manifest.json").exists());
    let agg = fs::read_to_string(dir.join("out/sweep_aggregate.csv")).unwrap();
    assert!(agg.contains("ci95_half_width"));
    // 5 policies x 4 values x 6 metrics data rows (plus comments + header).
    let data_rows = agg
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("policy"))
        .count();
    assert_eq!(data_rows, 120);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 40);
    assert!(manifest["code_version"].is_string());
}

#[test]
fn single_repetition_sweep_leaves_ci_empty() {
    let dir = tmp_dir("sweep1");
    let mut cfg = edge_multiai::domain::default_scenario::<f64>();
    cfg.requests_per_app = 10;
    let spec = serde_json::json!({
        "axis": "alpha",
        "values": [0.0, 1.0],
        "policies": ["iws-bfe"],
        "repetitions": 1,
        "base": cfg,
    });
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = run_in(
        &dir,
        &[
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let agg = fs::read_to_string(dir.join("out/sweep_aggregate.csv")).unwrap();
    let row = agg
        .lines()
        .find(|l| l.starts_with("iws-bfe"))
        .expect("aggregate rows exist");
    assert!(row.ends_with(",,1"), "CI column not empty: {row}");
}

#[test]
fn report_emits_six_tables_and_fails_on_empty_dir() {
    let dir = tmp_dir("report");
    // Seed some runs first.
    let cfg = small_scenario_json(&dir);
    for (policy, seed) in [("iws-bfe", "1"), ("none", "1"), ("lfe", "2")] {
        let out = run_in(
            &dir,
            &[
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--policy",
                policy,
                "--seed",
                seed,
                "--out",
                dir.join("results").join(format!("{policy}_{seed}")).to_str().unwrap(),
            ],
        );
        assert!(out.status.success());
    }
    let out = run_in(
        &dir,
        &[
            "report",
            "--results",
            dir.join("results").to_str().unwrap(),
            "--out",
            dir.join("figs").to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{out:?}");
    let tables = [
        "satisfaction_by_concurrency.csv",
        "cold_start_by_deviation.csv",
        "accuracy_by_deviation.csv",
        "robustness_by_deviation.csv",
        "pareto_points.csv",
        "per_app_fairness.csv",
    ];
    for table in tables {
        assert!(dir.join("figs").join(table).exists(), "missing {table}");
    }

    // A corrupt report is skipped with a warning, not a failure.
    fs::create_dir_all(dir.join("results/corrupt")).unwrap();
    fs::write(dir.join("results/corrupt/report.json"), "{not json").unwrap();
    let out = run_in(
        &dir,
        &[
            "report",
            "--results",
            dir.join("results").to_str().unwrap(),
            "--out",
            dir.join("figs2").to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));

    // Empty directory: exit 1.
    let empty = dir.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = run_in(
        &dir,
        &["report", "--results", empty.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
}
