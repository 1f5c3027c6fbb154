//! Stratified k-fold plans and precision / recall / F1.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::child_rng;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("{n} points cannot be split into {folds} folds")]
    TooFewPoints { n: usize, folds: usize },
    #[error("predictions have {predictions} entries, truth {truth}")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no rows to aggregate")]
    EmptyGroup,
}

/// Fold membership for one side (source or target) of a transfer pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    /// `fold_of[i]` is the test fold of row `i`.
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn test(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.n_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class with its own seeded stream, then deals rows to folds
/// round-robin. The dealing counter carries over from class 0 to class 1, so
/// fold sizes differ by at most one and every fold's per-class count is the
/// floor or ceiling of its proportional share.
pub fn stratified_kfold(labels: &[u8], n_folds: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if n_folds == 0 || labels.len() < n_folds {
        return Err(EvalError::TooFewPoints { n: labels.len(), folds: n_folds });
    }
    let mut fold_of = alloc::vec![0; labels.len()];
    let mut next = 0usize;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut child_rng(seed, "kfold-class", u64::from(class)));
        for i in members {
            fold_of[i] = next % n_folds;
            next += 1;
        }
    }
    Ok(FoldAssignment { n_folds, seed, fold_of })
}

/// Source and target fold assignments; fold `f` holds out test fold `f` on
/// both sides. Row indices refer to the source and target feature matrices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub source: FoldAssignment,
    pub target: FoldAssignment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub source_train: Vec<usize>,
    pub source_test: Vec<usize>,
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
}

impl FoldPlan {
    pub fn new(source_labels: &[u8], target_labels: &[u8], n_folds: usize, seed: u64) -> Result<Self, EvalError> {
        Ok(Self {
            n_folds,
            seed,
            source: stratified_kfold(source_labels, n_folds, crate::rng::derive_seed(seed, "folds/source", 0))?,
            target: stratified_kfold(target_labels, n_folds, crate::rng::derive_seed(seed, "folds/target", 0))?,
        })
    }

    pub fn split(&self, fold: usize) -> FoldSplit {
        FoldSplit {
            source_train: self.source.train(fold),
            source_test: self.source.test(fold),
            target_train: self.target.train(fold),
            target_test: self.target.test(fold),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], truth: &[u8]) -> Result<Self, EvalError> {
        if predictions.len() != truth.len() {
            return Err(EvalError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
        }
        let mut c = Self::default();
        for (&p, &t) in predictions.iter().zip(truth) {
            c.record(p != 0, t != 0);
        }
        Ok(c)
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`: equal to `2PR / (P + R)`, and 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { precision: self.precision(), recall: self.recall(), f1: self.f1() }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn compute_metrics(predictions: &[u8], truth: &[u8]) -> Result<(Confusion, Metrics), EvalError> {
    let c = Confusion::from_predictions(predictions, truth)?;
    Ok((c, c.metrics()))
}

/// Budget coordinate of a result row: an absolute count, or a percentage of
/// the target training pool (exp3) together with the count it resolved to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Count(usize),
    Percent { pct: f64, resolved: usize },
}

impl Budget {
    pub fn count(&self) -> usize {
        match *self {
            Budget::Count(n) => n,
            Budget::Percent { resolved, .. } => resolved,
        }
    }

    /// Grouping key across folds: percentages group by `pct` even though the
    /// resolved count may differ by one between folds.
    fn same_cell(&self, other: &Budget) -> bool {
        match (self, other) {
            (Budget::Count(a), Budget::Count(b)) => a == b,
            (Budget::Percent { pct: a, .. }, Budget::Percent { pct: b, .. }) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub k: usize,
    pub budget: Budget,
    pub fold: usize,
    /// 0 = before active learning.
    pub round: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Target points labelled so far in this fold.
    pub labeled: usize,
}

impl MetricsRow {
    pub fn new(dataset: &str, k: usize, budget: Budget, fold: usize, round: usize, confusion: Confusion, labeled: usize) -> Self {
        Self { dataset: dataset.into(), k, budget, fold, round, confusion, metrics: confusion.metrics(), labeled }
    }

    fn same_context(&self, other: &MetricsRow) -> bool {
        self.dataset == other.dataset && self.k == other.k && self.round == other.round && self.budget.same_cell(&other.budget)
    }
}

/// Fold-averaged metrics for one (dataset, k, budget, round) context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub k: usize,
    pub budget: Budget,
    pub round: usize,
    pub folds: usize,
    /// Counts summed over folds.
    pub confusion: Confusion,
    /// Macro mean over folds.
    pub metrics: Metrics,
    pub mean_labeled: f64,
}

/// Groups rows by context in first-appearance order and averages precision,
/// recall and F1 over folds.
pub fn aggregate_folds(rows: &[MetricsRow]) -> Result<Vec<AggregateRow>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut groups: Vec<Vec<&MetricsRow>> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|g| g[0].same_context(row)) {
            Some(g) => g.push(row),
            None => groups.push(alloc::vec![row]),
        }
    }
    Ok(groups
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let mut confusion = Confusion::default();
            let mut sum = Metrics::default();
            let mut labeled = 0usize;
            for r in &g {
                confusion.merge(&r.confusion);
                sum.precision += r.metrics.precision;
                sum.recall += r.metrics.recall;
                sum.f1 += r.metrics.f1;
                labeled += r.labeled;
            }
            AggregateRow {
                dataset: g[0].dataset.clone(),
                k: g[0].k,
                budget: g[0].budget,
                round: g[0].round,
                folds: g.len(),
                confusion,
                metrics: Metrics { precision: sum.precision / n, recall: sum.recall / n, f1: sum.f1 / n },
                mean_labeled: labeled as f64 / n,
            }
        })
        .collect())
}
