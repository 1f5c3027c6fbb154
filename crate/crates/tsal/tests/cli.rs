use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsal::config::{Experiment, ExperimentConfig};
use tsal::harness::ResultsTable;
use tsal::report;

fn tsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsal")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tsal(args);
    assert!(out.status.success(), "tsal {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", p(&data), "--datasets", "2", "--series", "3", "--length", "300", "--seed", "5"]);
    data
}

fn run_args<'a>(cmd: &'a str, data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![cmd, "--data-root", data, "--out", out, "--trees", "15", "--jobs", "1"]
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|path| (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap()))
        .collect()
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records().map(|r| headers.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.into(), v.into())).collect()).collect()
}

#[test]
fn exp1_sweep_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let summary = ok(&["validate-data", "--data-root", p(&data)]);
    let json: serde_json::Value = serde_json::from_slice(&summary.stdout).unwrap();
    assert_eq!(json.as_array().map(Vec::len), Some(2));

    let out = dir.path().join("exp1");
    let mut args = run_args("exp1", p(&data), p(&out));
    args.extend(["--k-grid", "1,2", "--budgets", "0,40"]);
    ok(&args);
    let first = read_dir(&out);
    for name in ["results.csv", "summary.csv", "selections.csv", "run_config.json", "provenance.json"] {
        assert!(first.contains_key(name), "missing {name}");
    }
    let plots: Vec<&String> = first.keys().filter(|n| n.starts_with("plot_exp1_")).collect();
    assert_eq!(plots.len(), 2, "{plots:?}");

    let rows = csv_rows(&out.join("results.csv"));
    // 2 targets x 2 k x 5 folds x (1 round at N=0 + 6 rounds at N=40)
    assert_eq!(rows.len(), 2 * 2 * 5 * 7);
    let contexts: BTreeSet<(String, String, String, String)> =
        rows.iter().map(|r| (r["dataset"].clone(), r["k"].clone(), r["N"].clone(), r["fold"].clone())).collect();
    assert_eq!(contexts.len(), 40);
    for r in &rows {
        let n: u64 = ["tp", "fp", "fn", "tn"].iter().map(|c| r[*c].parse::<u64>().unwrap()).sum();
        assert!(n > 0);
    }

    let picks = csv_rows(&out.join("selections.csv"));
    let mut per_context: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for s in &picks {
        assert_eq!(s["N"], "40");
        *per_context.entry((s["dataset"].clone(), s["k"].clone(), s["fold"].clone())).or_default() += 1;
    }
    assert!(per_context.values().all(|&n| n <= 40));

    ok(&args);
    assert_eq!(read_dir(&out), first, "rerun changed the report");

    let rebuilt = dir.path().join("rebuilt");
    ok(&["report", "--from", p(&out), "--out", p(&rebuilt)]);
    for (name, body) in read_dir(&rebuilt) {
        assert_eq!(Some(&body), first.get(&name), "{name} differs after rebuild");
    }
}

#[test]
fn exp2_matches_exp1_at_one_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (o1, o2) = (dir.path().join("e1"), dir.path().join("e2"));
    let mut a = run_args("exp1", p(&data), p(&o1));
    a.extend(["--k-grid", "1", "--budgets", "0,20", "--target", "syna"]);
    let mut b = run_args("exp2", p(&data), p(&o2));
    b.extend(["--budgets", "0,20", "--target", "syna"]);
    ok(&a);
    ok(&b);
    assert_eq!(fs::read(o1.join("results.csv")).unwrap(), fs::read(o2.join("results.csv")).unwrap());
    let rates = csv_rows(&o2.join("rates.csv"));
    assert!(!rates.is_empty());
    assert!(o2.join("plot_exp2.csv").exists());
}

#[test]
fn exp3_reports_percent_budgets_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("exp3");
    let mut args = run_args("exp3", p(&data), p(&out));
    args.extend(["--pct-budgets", "10", "--target", "synb", "--rounds", "2"]);
    ok(&args);
    let files = read_dir(&out);
    for name in ["baseline.csv", "baseline_summary.csv", "budget_resolution.csv", "plot_exp3.csv"] {
        assert!(files.contains_key(name), "missing {name}");
    }
    for r in csv_rows(&out.join("budget_resolution.csv")) {
        let pool: f64 = r["pool"].parse().unwrap();
        let n: usize = r["N"].parse().unwrap();
        assert_eq!(n, (0.1 * pool + 0.5).floor() as usize);
    }
    assert_eq!(csv_rows(&out.join("baseline.csv")).len(), 5);
}

#[test]
fn per_cluster_mode_spends_budget_per_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("pc");
    let mut args = run_args("exp1", p(&data), p(&out));
    args.extend(["--k-grid", "2", "--budgets", "20", "--target", "syna", "--budget-mode", "per_cluster"]);
    ok(&args);
    let mut per_fold: BTreeMap<String, usize> = BTreeMap::new();
    for s in csv_rows(&out.join("selections.csv")) {
        *per_fold.entry(s["fold"].clone()).or_default() += 1;
    }
    assert!(per_fold.values().all(|&n| n <= 40), "{per_fold:?}");
    assert!(per_fold.values().any(|&n| n > 20), "per-cluster quotas were not applied: {per_fold:?}");
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");

    let missing_root = tsal(&["exp1", "--out", p(&out)]);
    assert_eq!(missing_root.status.code(), Some(2));
    let bad_flag = tsal(&["exp1", "--alpha", "many", "--out", p(&out)]);
    assert_eq!(bad_flag.status.code(), Some(2));

    let data = dir.path().join("bad");
    fs::create_dir_all(data.join("d1")).unwrap();
    fs::write(data.join("d1/s.csv"), "timestamp,value,is_anomaly\n1,0.5,0\n2,0.7,2\n").unwrap();
    let bad_label = tsal(&["exp1", "--data-root", p(&data), "--out", p(&out)]);
    assert_eq!(bad_label.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&bad_label.stderr);
    assert!(stderr.contains("s.csv") && stderr.contains('2'), "{stderr}");

    let data = synth(dir.path());
    let unknown = tsal(&["exp1", "--data-root", p(&data), "--target", "nope", "--out", p(&out)]);
    assert_eq!(unknown.status.code(), Some(3));
    assert!(!out.exists(), "failed runs must not write a report");
}

#[test]
fn empty_results_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let cfg = ExperimentConfig::for_experiment(Experiment::Exp1);
    let table = ResultsTable::default();
    let err = report::emit_report(&table, &cfg, &BTreeMap::new(), &out).unwrap_err();
    assert!(matches!(err, tsal::harness::HarnessError::EmptyResults));
    assert!(!out.exists());
}

#[test]
fn precomputed_features_reproduce_extracted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let feats = dir.path().join("features");
    ok(&["features", "--data-root", p(&data), "--out", p(&feats), "--jobs", "1"]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut from_data = run_args("exp2", p(&data), p(&a));
    from_data.extend(["--budgets", "0,10", "--target", "syna"]);
    ok(&from_data);
    ok(&[
        "exp2",
        "--features-from",
        p(&feats),
        "--out",
        p(&b),
        "--trees",
        "15",
        "--jobs",
        "1",
        "--budgets",
        "0,10",
        "--target",
        "syna",
    ]);
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
}
