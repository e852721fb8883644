use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tiny() -> Value {
    json!({
        "dataset": {"synthetic": {"n_classes": 3, "n_features": 4, "intrinsic_dim": 2, "min_frames": 2,
                                   "max_frames": 4, "samples_per_class": 8}},
        "split": {"sizes": {"fold_a": 6, "fold_b": 6, "test": 6, "pca": 6}},
        "mask": {"n_nodes": 12, "pca": false, "m_prime": 2},
        "ga": {"n_generations": 3, "n_runs": 3},
        "quant_study": {"n_seeds": 2},
    })
}

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(config: &Value) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("in.json");
        std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
        let out = tmp.path().join("out");
        Self {
            config: path,
            out,
            _tmp: tmp,
        }
    }

    fn tdrc(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tdrc"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(&self.out)
            .args(args)
            .env_remove("TDRC_SEED")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.tdrc(args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out.join(name)).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn train_writes_report_and_echoes_params() {
    let mut cfg = tiny();
    cfg["reservoir"] = json!({"tau": 5e-3, "beta": 0.8, "phi0": 0.3, "rho": 1.5});
    let run = Run::new(&cfg);
    let before = std::fs::read(&run.config).unwrap();
    run.ok(&["train"]);
    let report = run.json("report.json");
    assert!(report["wer"].as_f64().unwrap() <= 1.0);
    let p = &report["params"];
    let echoed = ["tau", "beta", "phi0", "rho"].map(|k| p[k].as_f64().unwrap());
    assert_eq!(echoed, [5e-3, 0.8, 0.3, 1.5]);
    assert_eq!(p["tau_d"].as_f64(), Some(6.0));
    assert_eq!(report["config"], run.json("config.json"));
    assert!(run.out.join("model.json").exists());
    assert_eq!(std::fs::read(&run.config).unwrap(), before);
}

#[test]
fn manifest_round_trip_reproduces_synthetic_results() {
    let run = Run::new(&tiny());
    run.ok(&["gen-synthetic"]);
    run.ok(&["train"]);
    let direct = run.json("report.json")["wer"].clone();

    let mut cfg = tiny();
    cfg["dataset"]["manifest"] = json!(run.out.join("dataset/manifest.json"));
    let from_disk = Run::new(&cfg);
    from_disk.ok(&["train"]);
    assert_eq!(from_disk.json("report.json")["wer"], direct);
}

#[test]
fn optimize_ga_traces() {
    let mut cfg = tiny();
    cfg["ga"] = json!({"n_runs": 3});
    let run = Run::new(&cfg);
    run.ok(&["optimize-ga"]);
    let runs: Vec<Vec<Vec<f64>>> = (0..3).map(|r| csv_rows(&run.read(&format!("ga_run_{r}.csv")))).collect();
    for rows in &runs {
        assert_eq!(rows.len(), 40);
        assert_eq!(rows.last().unwrap()[4], 800.0);
    }
    let mean = csv_rows(&run.read("ga_mean.csv"));
    for (g, row) in mean.iter().enumerate() {
        for col in 1..4 {
            let expected = runs.iter().map(|r| r[g][col]).sum::<f64>() / 3.0;
            assert!((row[col] - expected).abs() < 1e-15, "generation {g} column {col}");
        }
    }
    let report = run.json("ga_report.json");
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert!(run.out.join("best_model.json").exists());
}

#[test]
fn single_run_average_is_the_run() {
    let run = Run::new(&tiny());
    run.ok(&["optimize-ga", "--runs", "1"]);
    assert_eq!(run.read("ga_mean.csv"), run.read("ga_run_0.csv"));
}

#[test]
fn pca_sweep_columns() {
    let run = Run::new(&tiny());
    run.ok(&["pca-sweep"]);
    let rows = csv_rows(&run.read("pca_sweep.csv"));
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
    assert_eq!(rows[3][1], 1.0);
    assert_eq!(rows[0][2], 4.0);
}

#[test]
fn quant_study_levels() {
    let run = Run::new(&tiny());
    run.ok(&["quant-study", "--bits", "8,9,16"]);
    let summary = csv_rows(&run.read("quant_summary.csv"));
    assert_eq!(summary[2][1], 2f64.powi(-13));
    assert_eq!(summary[1][1], summary[0][1] / 2.0);
    assert_eq!(csv_rows(&run.read("quant_study.csv")).len(), 6);
}

#[test]
fn toy_grid_and_resume() {
    let mut cfg = tiny();
    cfg["grid"] = json!({"axes": [
        {"param": "phi0", "min": 0.0, "max": 3.0, "points": 2},
        {"param": "beta", "min": -1.0, "max": 1.0, "points": 2},
        {"param": "tau", "min": 0.05, "max": 0.5, "points": 2}]});
    let run = Run::new(&cfg);
    run.ok(&["grid"]);
    let full = run.read("landscape.csv");
    assert_eq!(full.lines().count(), 9);
    assert!(!run.out.join("grid.checkpoint.json").exists());

    std::fs::remove_dir_all(&run.out).unwrap();
    run.ok(&["grid", "--stop-after", "4"]);
    assert!(!run.out.join("landscape.csv").exists());
    run.ok(&["grid", "--resume"]);
    assert_eq!(run.read("landscape.csv"), full);
}

#[test]
fn cost_estimate_reports_all_ratios() {
    let mut cfg = tiny();
    cfg["ga"] = json!({});
    let run = Run::new(&cfg);
    let out = run.ok(&["estimate-gs-cost"]);
    let est = &run.json("gs_cost.json")["estimate"];
    assert_eq!(est["ga_budget"].as_u64(), Some(800));
    assert_eq!(est["evaluations"].as_u64(), Some(128 * 512 * 203 * 64));
    assert_eq!(est["claimed_ratio"].as_f64(), Some(5106.0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("5106"));
}

#[test]
fn global_seed_falls_back_to_env() {
    let run = Run::new(&tiny());
    let out = Command::new(env!("CARGO_BIN_EXE_tdrc"))
        .args(["estimate-gs-cost", "--out"])
        .arg(&run.out)
        .env("TDRC_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg = run.json("config.json");
    assert_eq!(cfg["seed"].as_u64(), Some(42));
    assert_eq!(cfg["ga"]["seed"].as_u64(), Some(42));
    assert_eq!(cfg["dataset"]["synthetic"]["seed"].as_u64(), Some(42));
}

#[test]
fn dotted_overrides_reach_the_config() {
    let run = Run::new(&tiny());
    run.ok(&["estimate-gs-cost", "--reservoir.tau=0.0078125", "--mask.seed", "3"]);
    let cfg = run.json("config.json");
    assert_eq!(cfg["reservoir"]["tau"].as_f64(), Some(0.0078125));
    assert_eq!(cfg["mask"]["seed"].as_u64(), Some(3));
    assert_eq!(cfg["quantization"]["mode"], "additive_noise");
    assert_eq!(cfg["quantization"]["level"].as_f64(), Some(2f64.powi(-13)));
}

fn stage_error(run: &Run, args: &[&str]) -> String {
    let out = run.tdrc(args);
    assert!(!out.status.success());
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn failures_are_stage_tagged() {
    let run = Run::new(&tiny());
    assert!(stage_error(&run, &["train", "--dataset.manifest=/nonexistent/manifest.json"]).contains("[config]"));
    assert!(stage_error(&run, &["train", "--mask.typo=1"]).contains("unknown config key `mask.typo`"));
    assert!(stage_error(&run, &["train", "--mask.pca=true", "--mask.m_prime=9"]).contains("[pca]"));
    assert!(stage_error(&run, &["quant-study", "--bits", "1"]).contains("[config]"));
}
