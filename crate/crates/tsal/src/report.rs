//! Result files: per-fold results, fold-averaged summary, plot data, selection
//! logs and the configuration needed to rerun.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tsal_core::activelearn::SelectionLog;
use tsal_core::evaluate::{aggregate_folds, AggregateRow, Budget, Confusion, MetricsRow};
use tsal_core::features::FeatureMatrix;
use tsal_core::pipeline::{format_rate, per_point_increase};

use crate::config::{Experiment, ExperimentConfig};
use crate::harness::{HarnessError, ResultsTable};

pub const RESULTS_HEADER: &str = "dataset,k,N,fold,round,tp,fp,fn,tn,precision,recall,f1";
pub const SELECTION_HEADER: &str = "round,series_id,index,cluster,p_anom,certainty";

fn results_line(out: &mut String, r: &MetricsRow) {
    let c = &r.confusion;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.dataset,
        r.k,
        r.budget.count(),
        r.fold,
        r.round,
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        r.metrics.precision,
        r.metrics.recall,
        r.metrics.f1
    );
}

pub fn results_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        results_line(&mut out, r);
    }
    out
}

/// One selection log as `round,series_id,index,cluster,p_anom,certainty`.
pub fn selection_log_csv(log: &SelectionLog) -> String {
    let mut out = format!("{SELECTION_HEADER}\n");
    for s in &log.records {
        let _ = writeln!(out, "{},{},{},{},{},{}", s.round, s.point.series_id, s.point.index, s.cluster, s.p_anom, s.certainty);
    }
    out
}

fn budget_cells(b: &Budget) -> (String, String) {
    match b {
        Budget::Count(n) => (n.to_string(), String::new()),
        Budget::Percent { pct, .. } => (String::new(), pct.to_string()),
    }
}

fn summary_csv(agg: &[AggregateRow]) -> String {
    let mut out = String::from("dataset,k,N,pct,round,folds,tp,fp,fn,tn,precision,recall,f1\n");
    for a in agg {
        let (n, pct) = budget_cells(&a.budget);
        let c = &a.confusion;
        let _ = writeln!(
            out,
            "{},{},{n},{pct},{},{},{},{},{},{},{},{},{}",
            a.dataset, a.k, a.round, a.folds, c.tp, c.fp, c.fn_, c.tn, a.metrics.precision, a.metrics.recall, a.metrics.f1
        );
    }
    out
}

/// Last evaluated round per (dataset, k, budget), in first-appearance order.
pub fn final_rounds(agg: &[AggregateRow]) -> Vec<&AggregateRow> {
    let mut out: Vec<&AggregateRow> = Vec::new();
    for a in agg {
        match out.iter_mut().find(|o| o.dataset == a.dataset && o.k == a.k && same_budget(&o.budget, &a.budget)) {
            Some(o) if a.round > o.round => *o = a,
            Some(_) => {}
            None => out.push(a),
        }
    }
    out
}

fn same_budget(a: &Budget, b: &Budget) -> bool {
    match (a, b) {
        (Budget::Count(x), Budget::Count(y)) => x == y,
        (Budget::Percent { pct: x, .. }, Budget::Percent { pct: y, .. }) => x == y,
        _ => false,
    }
}

fn first_round<'a>(agg: &'a [AggregateRow], f: &AggregateRow) -> Option<&'a AggregateRow> {
    agg.iter().find(|a| a.dataset == f.dataset && a.k == f.k && same_budget(&a.budget, &f.budget) && a.round == 0)
}

fn x_value(b: &Budget) -> String {
    match b {
        Budget::Count(n) => n.to_string(),
        Budget::Percent { pct, .. } => pct.to_string(),
    }
}

/// Wide table: one row per x value, one column per series, cells are mean F1.
fn wide_table(x_name: &str, points: &[(String, String, f64)]) -> String {
    let mut xs: Vec<&str> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for (x, s, _) in points {
        if !xs.contains(&x.as_str()) {
            xs.push(x);
        }
        if !series.contains(&s.as_str()) {
            series.push(s);
        }
    }
    let mut out = String::from(x_name);
    for s in &series {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for x in xs {
        out.push_str(x);
        for s in &series {
            out.push(',');
            if let Some((_, _, y)) = points.iter().find(|(px, ps, _)| px == x && ps == s) {
                out.push_str(&y.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Plot-data files keyed by file name.
pub fn plot_files(experiment: Experiment, agg: &[AggregateRow]) -> Vec<(String, String)> {
    let finals = final_rounds(agg);
    match experiment {
        Experiment::Exp1 => {
            let mut by_dataset: BTreeMap<&str, Vec<(String, String, f64)>> = BTreeMap::new();
            for f in &finals {
                by_dataset.entry(&f.dataset).or_default().push((x_value(&f.budget), format!("k{}", f.k), f.metrics.f1));
            }
            by_dataset.into_iter().map(|(d, pts)| (format!("plot_exp1_{d}.csv"), wide_table("N", &pts))).collect()
        }
        Experiment::Exp2 | Experiment::Exp3 => {
            let x_name = if experiment == Experiment::Exp2 { "N" } else { "pct" };
            let pts: Vec<(String, String, f64)> =
                finals.iter().map(|f| (x_value(&f.budget), f.dataset.clone(), f.metrics.f1)).collect();
            vec![(format!("plot_{}.csv", experiment.name()), wide_table(x_name, &pts))]
        }
        Experiment::Baseline => Vec::new(),
    }
}

/// Per-point improvement table for the single-cluster runs.
pub fn rates_csv(agg: &[AggregateRow]) -> String {
    let mut out = String::from("dataset,N,precision,recall,f1,f1_before,delta_f1,per_point_increase\n");
    for f in final_rounds(agg) {
        let before = first_round(agg, f).map(|b| b.metrics.f1).unwrap_or(f.metrics.f1);
        let n = f.budget.count();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            f.dataset,
            n,
            f.metrics.precision,
            f.metrics.recall,
            f.metrics.f1,
            before,
            f.metrics.f1 - before,
            format_rate(per_point_increase(before, f.metrics.f1, n))
        );
    }
    out
}

fn selections_csv(table: &ResultsTable) -> String {
    let mut out = format!("dataset,k,N,fold,{SELECTION_HEADER},label\n");
    for ctx in &table.selections {
        for s in &ctx.log.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                ctx.dataset,
                ctx.k,
                ctx.budget.count(),
                ctx.fold,
                s.round,
                s.point.series_id,
                s.point.index,
                s.cluster,
                s.p_anom,
                s.certainty,
                s.label
            );
        }
    }
    out
}

fn budget_resolution_csv(table: &ResultsTable) -> String {
    let mut out = String::from("dataset,fold,pct,pool,N\n");
    for b in &table.budget_resolution {
        let _ = writeln!(out, "{},{},{},{},{}", b.dataset, b.fold, b.pct, b.pool, b.n);
    }
    out
}

#[derive(serde::Serialize)]
struct DatasetInfo {
    points: usize,
    anomalies: usize,
}

#[derive(serde::Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    pipeline: tsal_core::pipeline::PipelineConfig,
    datasets: BTreeMap<&'a str, DatasetInfo>,
    notes: &'a [String],
}

/// Every file of a report, rendered in memory.
pub fn render(
    table: &ResultsTable,
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, FeatureMatrix>,
) -> Result<Vec<(String, String)>, HarnessError> {
    if table.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let mut files = Vec::new();
    files.push(("run_config.json".to_string(), serde_json::to_string_pretty(cfg).expect("config serializes") + "\n"));
    let provenance = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: table.experiment.name(),
        pipeline: cfg.pipeline(),
        datasets: datasets.iter().map(|(k, v)| (k.as_str(), DatasetInfo { points: v.len(), anomalies: v.anomaly_count() })).collect(),
        notes: &table.notes,
    };
    files.push(("provenance.json".to_string(), serde_json::to_string_pretty(&provenance).expect("serializes") + "\n"));
    if !table.rows.is_empty() {
        files.push(("results.csv".into(), results_csv(&table.rows)));
        let agg = aggregate_folds(&table.rows).expect("non-empty");
        files.push(("summary.csv".into(), summary_csv(&agg)));
        files.extend(plot_files(table.experiment, &agg));
        if table.experiment == Experiment::Exp2 {
            files.push(("rates.csv".into(), rates_csv(&agg)));
        }
        files.push(("selections.csv".into(), selections_csv(table)));
    }
    if !table.baseline.is_empty() {
        files.push(("baseline.csv".into(), results_csv(&table.baseline)));
        let agg = aggregate_folds(&table.baseline).expect("non-empty");
        files.push(("baseline_summary.csv".into(), summary_csv(&agg)));
    }
    if !table.budget_resolution.is_empty() {
        files.push(("budget_resolution.csv".into(), budget_resolution_csv(table)));
    }
    Ok(files)
}

/// Writes the report into `dir`. Nothing is written when the table is empty.
pub fn emit_report(
    table: &ResultsTable,
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, FeatureMatrix>,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let files = render(table, cfg, datasets)?;
    write_files(dir, &files)
}

pub fn write_files(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            Ok(path)
        })
        .collect()
}

/// Parses a `results.csv`. With `resolution` (the rows of a
/// `budget_resolution.csv`), budgets are restored as percentages.
pub fn read_results(path: &Path, resolution: Option<&Path>) -> Result<Vec<MetricsRow>, HarnessError> {
    let bad = |message: String| crate::io::DataError::Invalid { path: path.into(), message };
    let mut pct_of: BTreeMap<(String, usize, usize), f64> = BTreeMap::new();
    if let Some(res) = resolution {
        let mut rdr = csv::Reader::from_path(res)
            .map_err(|source| crate::io::DataError::Csv { path: res.into(), source })?;
        for rec in rdr.records() {
            let rec = rec.map_err(|source| crate::io::DataError::Csv { path: res.into(), source })?;
            let parse = |i: usize| rec.get(i).unwrap_or("").to_string();
            let fold = parse(1).parse().map_err(|_| bad("bad fold".into()))?;
            let pct = parse(2).parse().map_err(|_| bad("bad pct".into()))?;
            let n = parse(4).parse().map_err(|_| bad("bad N".into()))?;
            pct_of.insert((parse(0), fold, n), pct);
        }
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|source| crate::io::DataError::Csv { path: path.into(), source })?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| crate::io::DataError::Csv { path: path.into(), source })?;
        let int = |j: usize| -> Result<u64, HarnessError> {
            rec.get(j).unwrap_or("").parse().map_err(|_| bad(format!("row {}: column {j} is not an integer", i + 1)).into())
        };
        let dataset = rec.get(0).unwrap_or("").to_string();
        let (k, n, fold, round) = (int(1)? as usize, int(2)? as usize, int(3)? as usize, int(4)? as usize);
        let confusion = Confusion { tp: int(5)?, fp: int(6)?, fn_: int(7)?, tn: int(8)? };
        let budget = match pct_of.get(&(dataset.clone(), fold, n)) {
            Some(&pct) => Budget::Percent { pct, resolved: n },
            None => Budget::Count(n),
        };
        rows.push(MetricsRow::new(&dataset, k, budget, fold, round, confusion, 0));
    }
    Ok(rows)
}
