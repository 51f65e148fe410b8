use std::path::Path;
use std::process::{Command, Output};

use pmn_cli::bench::bench_rows;
use pmn_core::config::ScenarioConfig;
use pmn_core::dan::{DanParams, ParamsFile};

fn pmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmn")).args(args).env("PMN_THREADS", "1").output().expect("spawn pmn")
}

fn write_config(dir: &Path, count: usize) -> String {
    let path = dir.join("sc.json");
    std::fs::write(&path, format!(r#"{{"node_layout": {{"count": {count}, "half_width": 200.0, "seed": 1}}}}"#)).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn train_smoke_writes_valid_params() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10);
    let out = dir.path().join("train");
    let o = pmn(&["train", "--config", &cfg, "--n-train", "10", "--epochs", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let file = ParamsFile::load(&out.join("params.json")).unwrap();
    assert_eq!(file.params.layers(), 10);
    assert_eq!(file.loss_curve.len(), 2);
    assert_eq!(std::fs::read_to_string(out.join("dataset.jsonl")).unwrap().lines().count(), 10);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn dan_without_params_names_the_train_command() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    let o = pmn(&["track", "--methods", "dan", "--params", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("pmn train"), "{}", stderr(&o));
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"nmax": 0}"#).unwrap();
    let o = pmn(&["track", "--methods", "nearest", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("N_max"), "{}", stderr(&o));
    std::fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    let o = pmn(&["track", "--methods", "nearest", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn budget_sweep_emits_one_row_per_budget_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10);
    let out = dir.path().join("track");
    let o = pmn(&[
        "track", "--config", &cfg, "--methods", "es,nearest", "--nmc", "2", "--frames", "3", "--pt-dbm", "26:2:30", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("rmse_summary.csv"));
    assert_eq!(rows.len(), 3 * 2);
    let budgets: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(budgets, ["26.0", "26.0", "28.0", "28.0", "30.0", "30.0"]);
    let trace = csv_rows(&out.join("traces/track_es_fpwf_30dbm.csv"));
    assert_eq!(trace.len(), 2 * 3 * 3);
    assert!(trace.iter().all(|r| r[13].split(';').count() == 4));
}

#[test]
fn converge_trace_lengths_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 12);
    let params = dir.path().join("params.json");
    ParamsFile {
        format_version: pmn_core::dan::PARAMS_FORMAT_VERSION,
        params: DanParams::default(),
        seed: 0,
        scenario_fingerprint: String::new(),
        dataset_fingerprint: String::new(),
        train: Default::default(),
        loss_curve: vec![],
    }
    .save(&params)
    .unwrap();
    let out = dir.path().join("conv");
    let o = pmn(&["converge", "--config", &cfg, "--params", params.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("converge.csv"));
    let count = |m: &str| rows.iter().filter(|r| r[0] == m).count();
    assert!(count("mm-admm-1") <= 31 && count("mm-admm-1") >= 2);
    assert!(count("mm-admm-2") <= 31 && count("mm-admm-2") >= 2);
    assert_eq!(count("dan"), 11);
    for m in ["mm-admm-1", "mm-admm-2"] {
        let costs: Vec<f64> = rows.iter().filter(|r| r[0] == m).map(|r| r[2].parse().unwrap()).collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }
    let o = pmn(&["converge", "--config", &cfg, "--nmax", "0", "--params", params.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn bench_rows_cover_every_method_and_size() {
    let cfg = ScenarioConfig::default();
    let rows = bench_rows(&cfg, 1, &[8, 12], 5, 3, &DanParams::default()).unwrap();
    for n in [8, 12] {
        for m in ["dan", "mm-admm-1", "mm-admm-2", "nearest", "es"] {
            assert_eq!(rows.iter().filter(|r| r.n == n && r.method == m).count(), 1, "{m} at N={n}");
        }
    }
    assert_eq!(rows.iter().filter(|r| r.method == "fpwf" && r.q == 3).count(), 1);
    assert_eq!(rows.iter().filter(|r| r.method == "oracle" && r.q == 3).count(), 1);
    assert!(rows.iter().all(|r| r.repeat == 5 && r.min_s <= r.median_s));
}
