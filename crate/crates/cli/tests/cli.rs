use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tsebct(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsebct")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = tsebct(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

/// Data lines of a CSV artifact, provenance comment and header removed.
fn data_lines(path: PathBuf) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1).map(str::to_string).collect()
}

fn small_dataset(dir: &Path, seed: &str) {
    ok(&["--seed", seed, "generate", "--out", "data.csv", "--n", "1500", "--p", "10"], dir);
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for (name, seed) in [("a.csv", "5"), ("b.csv", "5"), ("c.csv", "6")] {
        ok(&["--seed", seed, "generate", "--out", name, "--n", "300", "--p", "8"], dir.path());
    }
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.json"), read("b.json"));
    assert_ne!(read("a.csv"), read("c.csv"));
    let text = String::from_utf8(read("a.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert!(text.lines().next().unwrap().ends_with("seed=5"));
    assert_eq!(data_lines(dir.path().join("a.csv")).len(), 300);
    let summary = json(dir.path().join("a.json"));
    assert_eq!(summary["seed"], 5);
}

#[test]
fn out_of_range_confounding_rate_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsebct(&["generate", "--out", "x.csv", "--rc", "1.5"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("confounding_rate"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "seed = 4\n[generate]\nn = 200\np = 6\n").unwrap();
    ok(&["--config", "run.toml", "generate", "--out", "a.csv"], dir.path());
    ok(&["--config", "run.toml", "generate", "--out", "b.csv", "--n", "250"], dir.path());
    assert_eq!(data_lines(dir.path().join("a.csv")).len(), 200);
    assert_eq!(data_lines(dir.path().join("b.csv")).len(), 250);
    assert_eq!(json(dir.path().join("a.json"))["seed"], 4);

    fs::write(dir.path().join("bad.toml"), "[generate]\nrows = 10\n").unwrap();
    assert_eq!(code(&tsebct(&["--config", "bad.toml", "generate", "--out", "c.csv"], dir.path())), 2);
}

#[test]
fn single_cell_inventory_gives_one_valid_grid() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("inv.csv"), "q,r,volume\n3,-1,42\n").unwrap();
    ok(&["partition", "--inventory", "inv.csv", "--out-dir", "p"], dir.path());
    let report = json(dir.path().join("p/partition_validation.json"));
    assert_eq!(report["valid"], true);
    assert_eq!(report["grid_count"], 1);
    assert_eq!(report["threshold_fraction"], 0.02);
    assert_eq!(data_lines(dir.path().join("p/partition.csv")), ["3,-1,10,0"]);
}

#[test]
fn partition_reports_threshold_and_covers_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let mut inv = String::from("q,r,volume\n");
    for q in -6..6 {
        for r in -6..6 {
            inv.push_str(&format!("{q},{r},{}\n", ((q * 7 + r * 13) as i64).rem_euclid(50)));
        }
    }
    fs::write(dir.path().join("inv.csv"), inv).unwrap();
    ok(&["partition", "--inventory", "inv.csv", "--out-dir", "p"], dir.path());
    let report = json(dir.path().join("p/partition_validation.json"));
    assert_eq!(report["threshold_fraction"], 0.02);
    assert_eq!(report["valid"], true);
    assert_eq!(data_lines(dir.path().join("p/partition.csv")).len(), 144);

    ok(&["partition", "--inventory", "inv.csv", "--out-dir", "p10", "--threshold", "0.1"], dir.path());
    assert_eq!(json(dir.path().join("p10/partition_validation.json"))["threshold_fraction"], 0.1);
}

#[test]
fn balance_all_writes_every_artifact_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "2");
    ok(&["balance", "--data", "data.csv", "--method", "all", "--out-dir", "w"], dir.path());
    for method in ["ipw", "ebct", "tsebct"] {
        for kind in ["weights", "trace"] {
            assert!(dir.path().join(format!("w/{kind}_{method}.csv")).exists(), "{kind}_{method}");
        }
        let weights = data_lines(dir.path().join(format!("w/weights_{method}.csv")));
        assert_eq!(weights.len(), 1500);
        let total: f64 = weights.iter().map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    let report = json(dir.path().join("w/report_tsebct.json"));
    assert_eq!(report["converged"], true);
    assert!(report["final_loss"].as_f64().unwrap() < 0.01);
    assert!(report["residuals"]["by_kind"]["stratum_feature"].as_f64().is_some());
    let trace = data_lines(dir.path().join("w/trace_tsebct.csv"));
    assert_eq!(trace.len(), report["iterations"].as_u64().unwrap() as usize + 1);
}

#[test]
fn unconverged_solve_exits_with_solver_code_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "2");
    let out = tsebct(
        &["balance", "--data", "data.csv", "--method", "tsebct", "--out-dir", "w", "--max-iter", "1"],
        dir.path(),
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert_eq!(json(dir.path().join("w/report_tsebct.json"))["converged"], false);
}

#[test]
fn missing_treatment_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "2");
    let out = tsebct(&["balance", "--data", "data.csv", "--out-dir", "w", "--treatment-col", "dose"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("dose"), "{}", stderr(&out));
}

#[test]
fn evaluate_rejects_weight_length_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "2");
    fs::write(dir.path().join("short.csv"), "row_id,weight\n0,0.5\n1,0.5\n").unwrap();
    let out = tsebct(&["evaluate", "--data", "data.csv", "--weights", "short.csv", "--out-dir", "e"], dir.path());
    assert_eq!(code(&out), 3);
    let msg = stderr(&out);
    assert!(msg.contains("2 weights") && msg.contains("1500 rows"), "{msg}");
}

fn pipeline(dir: &Path) {
    small_dataset(dir, "9");
    ok(&["balance", "--data", "data.csv", "--out-dir", "w"], dir);
    let mut args = vec!["evaluate", "--data", "data.csv", "--out-dir", "e", "--dataset-label", "sim"];
    for w in ["w/weights_tsebct.csv", "unweighted", "w/weights_ebct.csv", "w/weights_ipw.csv"] {
        args.extend(["--weights", w]);
    }
    ok(&args, dir);
}

#[test]
fn pipeline_reports_four_columns_and_is_reproducible() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    pipeline(first.path());
    pipeline(second.path());
    for file in ["w/weights_tsebct.csv", "w/report_ipw.json", "e/evaluation.json", "e/table3.csv", "e/table4.csv"] {
        assert_eq!(fs::read(first.path().join(file)).unwrap(), fs::read(second.path().join(file)).unwrap(), "{file}");
    }
    let table3 = fs::read_to_string(first.path().join("e/table3.csv")).unwrap();
    assert_eq!(table3.lines().nth(1).unwrap(), "dataset,unweighted,ipw,ebct,tsebct");
    assert!(table3.lines().nth(2).unwrap().starts_with("sim,"));
    let table4 = data_lines(first.path().join("e/table4.csv"));
    assert!(table4[0].starts_with("sim,auuc,") && table4[1].starts_with("sim,auc,"));

    let dir = first.path();
    ok(
        &[
            "evaluate",
            "--data",
            "data.csv",
            "--out-dir",
            "e2",
            "--dataset-label",
            "again",
            "--weights",
            "w/weights_ebct.csv",
        ],
        dir,
    );
    ok(&["report", "--inputs", "e/evaluation.json", "e2/evaluation.json", "--out-dir", "r"], dir);
    let merged = fs::read_to_string(dir.join("r/table3.csv")).unwrap();
    let lines: Vec<&str> = merged.lines().collect();
    assert_eq!(lines[1], "dataset,unweighted,ipw,ebct,tsebct");
    assert_eq!(lines.len(), 4);
    let again: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(again[0], "again");
    assert!(again[1].is_empty() && !again[3].is_empty());
}

#[test]
fn single_method_report_has_one_column() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "3");
    ok(&["evaluate", "--data", "data.csv", "--weights", "unweighted", "--out-dir", "e"], dir.path());
    ok(&["report", "--inputs", "e/evaluation.json", "--out-dir", "r"], dir.path());
    let table3 = fs::read_to_string(dir.path().join("r/table3.csv")).unwrap();
    assert_eq!(table3.lines().nth(1).unwrap(), "dataset,unweighted");
    let evaluation = json(dir.path().join("e/evaluation.json"));
    assert_eq!(evaluation["methods"].as_array().unwrap().len(), 1);
}
