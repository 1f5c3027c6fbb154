//! Experiment drivers: the transfer + active-learning sweeps (experiments
//! 1 to 3) and the within-domain baseline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tsal_core::activelearn::{BudgetMode, SelectionLog};
use tsal_core::evaluate::{Budget, MetricsRow};
use tsal_core::features::{extract, FeatureError, FeatureMatrix};
use tsal_core::ingest::{DatasetCatalog, SamplingError};
use tsal_core::parallel::Executor;
use tsal_core::pipeline::{
    prepare_fold, resolve_pct_budget, run_baseline_fold, run_budget, setup_transfer, subsample_source, target_folds,
    FoldOutcome, PipelineError,
};

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::exec::Rayon;
use crate::io::{self, DataError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{dataset}: {source}")]
    Features { dataset: String, source: FeatureError },
    #[error("{dataset}: source sampling: {source}")]
    Sampling { dataset: String, source: SamplingError },
    #[error("dataset={dataset} k={k} N={budget} fold={fold}: {source}")]
    Pipeline { dataset: String, k: usize, budget: String, fold: usize, source: PipelineError },
    #[error("unknown target dataset `{0}`")]
    UnknownTarget(String),
    #[error("{0}")]
    NotEnoughData(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no results to report")]
    EmptyResults,
}

impl HarnessError {
    /// 2 for configuration problems, 3 for data problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_)
            | HarnessError::Features { .. }
            | HarnessError::Sampling { .. }
            | HarnessError::Pipeline { .. }
            | HarnessError::UnknownTarget(_)
            | HarnessError::NotEnoughData(_) => 3,
            HarnessError::Io { .. } | HarnessError::EmptyResults => 1,
        }
    }
}

/// Built-in features for every series of every dataset, series in parallel.
pub fn extract_catalog<E: Executor>(
    catalog: &DatasetCatalog,
    window: usize,
    exec: &E,
) -> Result<BTreeMap<String, FeatureMatrix>, HarnessError> {
    let mut out = BTreeMap::new();
    for id in catalog.dataset_ids() {
        let series = catalog.get(id).unwrap_or_default();
        let parts = exec
            .map(series.len(), |i| extract(&series[i], window))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| HarnessError::Features { dataset: id.into(), source })?;
        let fm = FeatureMatrix::concat(&parts).map_err(|source| HarnessError::Features { dataset: id.into(), source })?;
        out.insert(id.to_string(), fm);
    }
    Ok(out)
}

/// Feature matrices per dataset, from precomputed files or extracted from the catalog.
pub fn load_datasets(cfg: &ExperimentConfig, exec: &Rayon) -> Result<BTreeMap<String, FeatureMatrix>, HarnessError> {
    if let Some(dir) = &cfg.features_from {
        info!("loading precomputed features from {}", dir.display());
        return Ok(io::load_precomputed_dir(dir)?.into_iter().collect());
    }
    let root = cfg.data_root.as_ref().ok_or_else(|| ConfigError::Invalid("data_root is not set".into()))?;
    info!("loading catalog from {}", root.display());
    let catalog = io::load_catalog(root, None)?;
    extract_catalog(&catalog, cfg.window, exec)
}

/// Merged source for `target_id`: every other dataset, each subsampled per
/// its configured fraction.
pub fn source_for(
    target_id: &str,
    datasets: &BTreeMap<String, FeatureMatrix>,
    cfg: &ExperimentConfig,
) -> Result<FeatureMatrix, HarnessError> {
    let mut parts = Vec::new();
    for (id, fm) in datasets.iter().filter(|(id, _)| id.as_str() != target_id) {
        let fraction = cfg.sampling_for(id);
        if fraction < 1.0 {
            parts.push(
                subsample_source(fm, id, fraction, cfg.seed)
                    .map_err(|source| HarnessError::Sampling { dataset: id.clone(), source })?,
            );
        } else {
            parts.push(fm.clone());
        }
    }
    if parts.is_empty() {
        return Err(HarnessError::NotEnoughData(format!("no source datasets for target `{target_id}`")));
    }
    FeatureMatrix::concat(&parts).map_err(|source| HarnessError::Features { dataset: target_id.into(), source })
}

pub fn resolve_targets(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, FeatureMatrix>,
) -> Result<Vec<String>, HarnessError> {
    let targets: Vec<String> = if cfg.targets.is_empty() {
        datasets.keys().filter(|id| !cfg.is_excluded(id)).cloned().collect()
    } else {
        for t in &cfg.targets {
            if !datasets.contains_key(t) {
                return Err(HarnessError::UnknownTarget(t.clone()));
            }
        }
        cfg.targets.clone()
    };
    if targets.is_empty() {
        return Err(HarnessError::NotEnoughData("no target datasets selected".into()));
    }
    Ok(targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionContext {
    pub dataset: String,
    pub k: usize,
    pub budget: Budget,
    pub fold: usize,
    pub log: SelectionLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetResolution {
    pub dataset: String,
    pub fold: usize,
    pub pct: f64,
    pub pool: usize,
    pub n: usize,
}

/// Every evaluated (dataset, k, budget, fold, round), in canonical order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub experiment: Experiment,
    pub rows: Vec<MetricsRow>,
    /// Within-domain comparator rows (k = 0, budget 0, round 0).
    pub baseline: Vec<MetricsRow>,
    pub selections: Vec<SelectionContext>,
    pub budget_resolution: Vec<BudgetResolution>,
    pub notes: Vec<String>,
}

impl ResultsTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.baseline.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BudgetGrid {
    Counts(Vec<usize>),
    Percents(Vec<f64>),
}

impl BudgetGrid {
    fn len(&self) -> usize {
        match self {
            BudgetGrid::Counts(v) => v.len(),
            BudgetGrid::Percents(v) => v.len(),
        }
    }

    fn resolve(&self, i: usize, pool: usize) -> Budget {
        match self {
            BudgetGrid::Counts(v) => Budget::Count(v[i]),
            BudgetGrid::Percents(v) => Budget::Percent { pct: v[i], resolved: resolve_pct_budget(v[i], pool) },
        }
    }
}

fn budget_label(b: &Budget) -> String {
    match b {
        Budget::Count(n) => n.to_string(),
        Budget::Percent { pct, .. } => format!("{pct}%"),
    }
}

/// Runs the full protocol for each target, k and budget. Fold state (k-means,
/// CORAL, base forests) is built once per (target, k, fold) and shared by all
/// budgets; every budget replays active learning from the same base models.
pub fn run_transfer(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, FeatureMatrix>,
    grid: &BudgetGrid,
    exec: &Rayon,
) -> Result<ResultsTable, HarnessError> {
    if datasets.len() < 2 {
        return Err(HarnessError::NotEnoughData("transfer experiments need at least 2 datasets".into()));
    }
    let pc = cfg.pipeline();
    let mut table = ResultsTable { experiment: cfg.experiment, ..ResultsTable::default() };
    for target_id in resolve_targets(cfg, datasets)? {
        let target = &datasets[&target_id];
        let source = source_for(&target_id, datasets, cfg)?;
        info!("{target_id}: {} target points, {} source points", target.len(), source.len());
        for &k in &cfg.k_grid {
            let ctx = |fold: usize, budget: String| pipeline_err(&target_id, k, fold, budget);
            let setup = setup_transfer(target, &source, k, &pc).map_err(ctx(0, "-".into()))?;
            let per_fold = exec.map(pc.n_folds, |fold| -> Result<Vec<(Budget, FoldOutcome)>, HarnessError> {
                let state =
                    prepare_fold(target, &source, &setup, fold, &pc, exec).map_err(ctx(fold, "-".into()))?;
                check_label_passthrough(&state, &source, &setup, fold);
                (0..grid.len())
                    .map(|b| {
                        let budget = grid.resolve(b, state.pool_size);
                        run_budget(&state, target, budget.count(), &pc, exec)
                            .map(|o| (budget, o))
                            .map_err(ctx(fold, budget_label(&budget)))
                    })
                    .collect()
            });
            let per_fold = per_fold.into_iter().collect::<Result<Vec<_>, _>>()?;
            for b in 0..grid.len() {
                for outcomes in &per_fold {
                    let (budget, outcome) = &outcomes[b];
                    let cap = match cfg.budget_mode {
                        BudgetMode::Global => budget.count(),
                        BudgetMode::PerCluster => budget.count() * k,
                    };
                    record_outcome(&mut table, &target_id, k, *budget, cap, outcome);
                }
            }
            info!("{target_id}: k={k} done");
        }
    }
    Ok(table)
}

fn pipeline_err(dataset: &str, k: usize, fold: usize, budget: String) -> impl FnOnce(PipelineError) -> HarnessError {
    let dataset = dataset.to_string();
    move |source| HarnessError::Pipeline { dataset, k, budget, fold, source }
}

fn check_label_passthrough(
    state: &tsal_core::pipeline::FoldState,
    source: &FeatureMatrix,
    setup: &tsal_core::pipeline::TransferSetup,
    fold: usize,
) {
    let train = setup.plan.split(fold).source_train;
    let expected: usize = train.iter().filter(|&&i| source.labels[i] == 1).count();
    let carried: usize = state.learners.iter().map(|l| l.train_y.iter().filter(|&&y| y == 1).count()).sum();
    assert_eq!(expected, carried, "adaptation must not alter source labels");
}

/// `n` is the most points the context may label: N, or N per cluster in
/// per-cluster mode.
fn record_outcome(table: &mut ResultsTable, dataset: &str, k: usize, budget: Budget, n: usize, outcome: &FoldOutcome) {
    let labelled = outcome.log.total();
    assert!(labelled <= n, "labelled {labelled} points with budget {n}");
    if labelled < n {
        let note = format!(
            "dataset={dataset} k={k} N={} fold={}: labelled {labelled} of {n} (pool {}, {})",
            budget_label(&budget),
            outcome.fold,
            outcome.pool_size,
            match outcome.log.exhausted_at {
                Some(r) => format!("nothing selectable from round {r}"),
                None => "diversity filter left batches short".into(),
            }
        );
        warn!("{note}");
        table.notes.push(note);
    }
    if let Budget::Percent { pct, resolved } = budget {
        table.budget_resolution.push(BudgetResolution {
            dataset: dataset.into(),
            fold: outcome.fold,
            pct,
            pool: outcome.pool_size,
            n: resolved,
        });
    }
    for (round, c) in outcome.confusions.iter().enumerate() {
        table.rows.push(MetricsRow::new(dataset, k, budget, outcome.fold, round, *c, outcome.labeled[round]));
    }
    if n > 0 {
        table.selections.push(SelectionContext {
            dataset: dataset.into(),
            k,
            budget,
            fold: outcome.fold,
            log: outcome.log.clone(),
        });
    }
}

/// Forest trained on the target training folds only, per target dataset.
pub fn run_baseline(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, FeatureMatrix>,
    exec: &Rayon,
) -> Result<ResultsTable, HarnessError> {
    let pc = cfg.pipeline();
    let mut table = ResultsTable { experiment: cfg.experiment, ..ResultsTable::default() };
    for target_id in resolve_targets(cfg, datasets)? {
        let target = &datasets[&target_id];
        let anomalies = target.anomaly_count();
        if anomalies == 0 || anomalies == target.len() {
            let note = format!("dataset={target_id}: single-class target, baseline F1 is 0 by convention");
            warn!("{note}");
            table.notes.push(note);
        }
        let err = |fold: usize| pipeline_err(&target_id, 0, fold, "0".into());
        let folds = target_folds(&target.labels, &pc).map_err(|e| err(0)(e.into()))?;
        let results = exec.map(pc.n_folds, |fold| run_baseline_fold(target, &folds, fold, &pc, exec).map_err(err(fold)));
        for (fold, c) in results.into_iter().enumerate() {
            table.baseline.push(MetricsRow::new(&target_id, 0, Budget::Count(0), fold, 0, c?, 0));
        }
    }
    Ok(table)
}

pub fn run_exp1(cfg: &ExperimentConfig, datasets: &BTreeMap<String, FeatureMatrix>, exec: &Rayon) -> Result<ResultsTable, HarnessError> {
    run_transfer(cfg, datasets, &BudgetGrid::Counts(cfg.budgets.clone()), exec)
}

/// Experiment 1 restricted to a single cluster.
pub fn run_exp2(cfg: &ExperimentConfig, datasets: &BTreeMap<String, FeatureMatrix>, exec: &Rayon) -> Result<ResultsTable, HarnessError> {
    if cfg.k_grid != [1] {
        return Err(ConfigError::Invalid("experiment 2 runs with k = 1 only".into()).into());
    }
    run_transfer(cfg, datasets, &BudgetGrid::Counts(cfg.budgets.clone()), exec)
}

/// Percentage budgets plus the within-domain comparator.
pub fn run_exp3(cfg: &ExperimentConfig, datasets: &BTreeMap<String, FeatureMatrix>, exec: &Rayon) -> Result<ResultsTable, HarnessError> {
    let mut table = run_transfer(cfg, datasets, &BudgetGrid::Percents(cfg.pct_budgets.clone()), exec)?;
    let base = run_baseline(cfg, datasets, exec)?;
    table.baseline = base.baseline;
    table.notes.extend(base.notes);
    Ok(table)
}

pub fn run(cfg: &ExperimentConfig, datasets: &BTreeMap<String, FeatureMatrix>, exec: &Rayon) -> Result<ResultsTable, HarnessError> {
    match cfg.experiment {
        Experiment::Exp1 => run_exp1(cfg, datasets, exec),
        Experiment::Exp2 => run_exp2(cfg, datasets, exec),
        Experiment::Exp3 => run_exp3(cfg, datasets, exec),
        Experiment::Baseline => run_baseline(cfg, datasets, exec),
    }
}
