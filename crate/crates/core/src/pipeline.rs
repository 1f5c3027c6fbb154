//! One transfer + active-learning run over a fold plan.
//!
//! Cluster assignment and fold membership do not depend on the budget, so a
//! sweep prepares each fold once ([`prepare_fold`]) and then replays the
//! active-learning loop per budget ([`run_budget`]) from a copy of the base
//! models.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activelearn::{
    run_active_learning, AcquisitionConfig, AcquisitionError, BudgetMode, ClusterLearner, Pool, Provenance, SelectionLog,
    DEFAULT_ALPHA, DEFAULT_ROUNDS,
};
use crate::adapt::{fit_coral_with, AdaptError, CoralTransform, MeanAlignment, DEFAULT_LAMBDA};
use crate::cluster::{assign, kmeanspp_fit, ClusterError, KMeansModel, KMeansParams};
use crate::evaluate::{stratified_kfold, Confusion, EvalError, FoldAssignment, FoldPlan, DEFAULT_FOLDS};
use crate::features::FeatureMatrix;
use crate::forest::{self, ForestError, ForestParams, DEFAULT_THRESHOLD};
use crate::ingest::{source_sampling_seed, stratified_indices, PointRef, SamplingError};
use crate::matrix::Matrix;
use crate::parallel::Executor;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("source has {source_cols} feature columns, target {target_cols}")]
    ColumnMismatch { source_cols: usize, target_cols: usize },
    #[error("source set is empty")]
    EmptySource,
    #[error("target set is empty")]
    EmptyTarget,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_folds: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub standardize: bool,
    pub coral_lambda: f64,
    pub mean_alignment: MeanAlignment,
    /// Seed inside is ignored; per-(fold, cluster) seeds are derived.
    pub forest: ForestParams,
    pub alpha: usize,
    pub rounds: usize,
    pub budget_mode: BudgetMode,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_folds: DEFAULT_FOLDS,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            standardize: true,
            coral_lambda: DEFAULT_LAMBDA,
            mean_alignment: MeanAlignment::Recenter,
            forest: ForestParams::default(),
            alpha: DEFAULT_ALPHA,
            rounds: DEFAULT_ROUNDS,
            budget_mode: BudgetMode::Global,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    fn folds_seed(&self) -> u64 {
        derive_seed(self.seed, "folds", 0)
    }

    pub fn acquisition(&self, total_budget: usize) -> AcquisitionConfig {
        AcquisitionConfig { alpha: self.alpha, rounds: self.rounds, total_budget, budget_mode: self.budget_mode }
    }
}

/// Stratified subsample of one source dataset's feature rows, picking the same
/// points as series-level transfer-pair construction with the same seed.
pub fn subsample_source(
    features: &FeatureMatrix,
    dataset_id: &str,
    fraction: f64,
    seed: u64,
) -> Result<FeatureMatrix, SamplingError> {
    let rows = stratified_indices(&features.labels, fraction, source_sampling_seed(seed, dataset_id))?;
    Ok(features.select_rows(&rows))
}

/// Budget-independent part of a transfer run for one `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSetup {
    pub k: usize,
    pub kmeans: KMeansModel,
    pub target_cluster: Vec<usize>,
    pub source_cluster: Vec<usize>,
    pub plan: FoldPlan,
}

/// Fits k-means++ on the whole target set, assigns both sides, and draws the
/// stratified fold plan (shared by every `k`).
pub fn setup_transfer(
    target: &FeatureMatrix,
    source: &FeatureMatrix,
    k: usize,
    cfg: &PipelineConfig,
) -> Result<TransferSetup, PipelineError> {
    if target.is_empty() {
        return Err(PipelineError::EmptyTarget);
    }
    if source.is_empty() {
        return Err(PipelineError::EmptySource);
    }
    if target.data.cols() != source.data.cols() {
        return Err(PipelineError::ColumnMismatch { source_cols: source.data.cols(), target_cols: target.data.cols() });
    }
    let params = KMeansParams {
        k,
        seed: derive_seed(cfg.seed, "kmeans", k as u64),
        restarts: cfg.kmeans_restarts,
        max_iter: cfg.kmeans_max_iter,
        tol: cfg.kmeans_tol,
        standardize: cfg.standardize,
    };
    let kmeans = kmeanspp_fit(&target.data, &params)?;
    let target_cluster = assign(&kmeans, &target.data)?;
    let source_cluster = assign(&kmeans, &source.data)?;
    let plan = FoldPlan::new(&source.labels, &target.labels, cfg.n_folds, cfg.folds_seed())?;
    Ok(TransferSetup { k, kmeans, target_cluster, source_cluster, plan })
}

/// Per-fold state before any target label is revealed.
#[derive(Debug, Clone)]
pub struct FoldState {
    pub fold: usize,
    pub learners: Vec<ClusterLearner>,
    pub coral: Vec<CoralTransform>,
    /// Adapted source-test rows per cluster; built for completeness, never scored.
    pub source_test: Vec<Matrix>,
    pub test_rows: Vec<usize>,
    pub test_cluster: Vec<usize>,
    /// Target-train rows available for labelling (all clusters).
    pub pool_size: usize,
}

fn rows_in(rows: &[usize], cluster_of: &[usize], c: usize) -> Vec<usize> {
    rows.iter().copied().filter(|&i| cluster_of[i] == c).collect()
}

fn forest_seed(cfg: &PipelineConfig, k: usize, fold: usize, cluster: usize) -> u64 {
    derive_seed(cfg.seed, &format!("forest/k{k}/fold{fold}"), cluster as u64)
}

/// Per cluster: CORAL on (source train, target train), adapted source train
/// for the base forest, target train as the unlabelled pool.
///
/// A cluster without source training rows has no base model (scores 0). A
/// cluster without enough target training rows to estimate a covariance keeps
/// the source unadapted.
pub fn prepare_fold<E: Executor>(
    target: &FeatureMatrix,
    source: &FeatureMatrix,
    setup: &TransferSetup,
    fold: usize,
    cfg: &PipelineConfig,
    exec: &E,
) -> Result<FoldState, PipelineError> {
    let split = setup.plan.split(fold);
    let d = target.data.cols();
    let mut learners = Vec::with_capacity(setup.k);
    let mut coral = Vec::with_capacity(setup.k);
    let mut source_test = Vec::with_capacity(setup.k);
    for c in 0..setup.k {
        let src_rows = rows_in(&split.source_train, &setup.source_cluster, c);
        let tgt_rows = rows_in(&split.target_train, &setup.target_cluster, c);
        let xs = source.data.select_rows(&src_rows);
        let xt = target.data.select_rows(&tgt_rows);
        let min_target = if cfg.coral_lambda > 0.0 { 1 } else { 2 };
        let transform = if xs.rows() >= min_target && xt.rows() >= min_target {
            fit_coral_with(&xs, &xt, cfg.coral_lambda, cfg.mean_alignment)?
        } else {
            CoralTransform::identity(d)
        };
        let train_x = transform.apply(&xs)?;
        let train_y: Vec<u8> = src_rows.iter().map(|&i| source.labels[i]).collect();
        let seed = forest_seed(cfg, setup.k, fold, c);
        let model = if train_x.is_empty() {
            None
        } else {
            Some(forest::fit_with(&train_x, &train_y, &cfg.forest.clone().with_seed(seed), exec)?)
        };
        let st_rows = rows_in(&split.source_test, &setup.source_cluster, c);
        source_test.push(transform.apply(&source.data.select_rows(&st_rows))?);
        let refs: Vec<PointRef> = tgt_rows.iter().map(|&i| target.refs[i].clone()).collect();
        let n = refs.len();
        learners.push(ClusterLearner {
            train_x,
            train_y,
            model,
            pool: Pool::new(refs, xt, alloc::vec![Provenance::TargetTrain; n]),
            forest_seed: seed,
        });
        coral.push(transform);
    }
    let test_cluster = split.target_test.iter().map(|&i| setup.target_cluster[i]).collect();
    Ok(FoldState { fold, learners, coral, source_test, test_rows: split.target_test, test_cluster, pool_size: split.target_train.len() })
}

/// Pooled confusion over the target test rows, each scored by its cluster's model.
pub fn evaluate_fold(
    learners: &[ClusterLearner],
    target: &FeatureMatrix,
    test_rows: &[usize],
    test_cluster: &[usize],
    threshold: f64,
) -> Confusion {
    let mut confusion = Confusion::default();
    for (c, learner) in learners.iter().enumerate() {
        let rows = rows_in_positions(test_rows, test_cluster, c);
        if rows.is_empty() {
            continue;
        }
        let scores = learner.score(&target.data.select_rows(&rows));
        for (&i, p) in rows.iter().zip(scores) {
            confusion.record(p >= threshold, target.labels[i] == 1);
        }
    }
    debug_assert_eq!(confusion.total(), test_rows.len() as u64);
    confusion
}

fn rows_in_positions(rows: &[usize], cluster_of_pos: &[usize], c: usize) -> Vec<usize> {
    rows.iter().zip(cluster_of_pos).filter(|(_, &k)| k == c).map(|(&i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub budget: usize,
    /// Index 0 is before active learning; then one entry per round. Rounds
    /// after an early stop repeat the final state.
    pub confusions: Vec<Confusion>,
    /// Labelled target points after each entry of `confusions`.
    pub labeled: Vec<usize>,
    pub log: SelectionLog,
    pub pool_size: usize,
}

impl FoldOutcome {
    pub fn last(&self) -> Confusion {
        *self.confusions.last().expect("round 0 is always present")
    }
}

/// Runs the budgeted loop from a copy of the fold's base models. A zero budget
/// yields round 0 only.
pub fn run_budget<E: Executor>(
    state: &FoldState,
    target: &FeatureMatrix,
    budget: usize,
    cfg: &PipelineConfig,
    exec: &E,
) -> Result<FoldOutcome, PipelineError> {
    let mut learners = state.learners.clone();
    let eval = |l: &[ClusterLearner]| evaluate_fold(l, target, &state.test_rows, &state.test_cluster, cfg.threshold);
    let mut confusions = alloc::vec![eval(&learners)];
    let mut labeled = alloc::vec![0];
    let mut log = SelectionLog::default();
    if budget > 0 {
        let truth: BTreeMap<&PointRef, u8> = target.refs.iter().zip(&target.labels).map(|(r, &l)| (r, l)).collect();
        let mut oracle = |p: &PointRef| truth[p];
        let initial: usize = learners.iter().map(|l| l.train_y.len()).sum();
        log = run_active_learning(&mut learners, &cfg.acquisition(budget), &cfg.forest, &mut oracle, exec, |_, l| {
            confusions.push(eval(l));
            labeled.push(l.iter().map(|c| c.train_y.len()).sum::<usize>() - initial);
        })?;
        while confusions.len() < cfg.rounds + 1 {
            confusions.push(*confusions.last().expect("non-empty"));
            labeled.push(*labeled.last().expect("non-empty"));
        }
    }
    Ok(FoldOutcome { fold: state.fold, budget, confusions, labeled, log, pool_size: state.pool_size })
}

/// `round(pct / 100 * pool)`, halves rounding up.
pub fn resolve_pct_budget(pct: f64, pool: usize) -> usize {
    libm::floor(pct / 100.0 * pool as f64 + 0.5) as usize
}

/// Target-side folds used by both the transfer runs and the baseline.
pub fn target_folds(labels: &[u8], cfg: &PipelineConfig) -> Result<FoldAssignment, EvalError> {
    stratified_kfold(labels, cfg.n_folds, derive_seed(cfg.folds_seed(), "folds/target", 0))
}

/// Within-domain comparator: forest on the target training folds only.
pub fn run_baseline_fold<E: Executor>(
    target: &FeatureMatrix,
    folds: &FoldAssignment,
    fold: usize,
    cfg: &PipelineConfig,
    exec: &E,
) -> Result<Confusion, PipelineError> {
    let train = folds.train(fold);
    let test = folds.test(fold);
    let x = target.data.select_rows(&train);
    let y: Vec<u8> = train.iter().map(|&i| target.labels[i]).collect();
    let params = cfg.forest.clone().with_seed(derive_seed(cfg.seed, "baseline", fold as u64));
    let model = forest::fit_with(&x, &y, &params, exec)?;
    let pred = model.predict(&target.data.select_rows(&test), cfg.threshold)?;
    let truth: Vec<u8> = test.iter().map(|&i| target.labels[i]).collect();
    Ok(Confusion::from_predictions(&pred, &truth)?)
}

/// `(after - before) / n`, undefined for `n = 0`.
pub fn per_point_increase(before: f64, after: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| (after - before) / n as f64)
}

/// Five decimal places; empty when undefined.
pub fn format_rate(rate: Option<f64>) -> String {
    rate.map(|r| format!("{r:.5}")).unwrap_or_default()
}
