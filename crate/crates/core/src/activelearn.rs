//! Pool-based acquisition: rank unlabelled target points by model certainty
//! `|P(norm) - P(anom)|`, walk the ranking from the least certain point and
//! skip anything within `alpha` positions of an already chosen point in the
//! same series. Chosen points are labelled by an oracle, appended to their
//! cluster's training set and the cluster model is refit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::forest::{self, refit_seed, ForestError, ForestModel, ForestParams};
use crate::ingest::PointRef;
use crate::matrix::Matrix;
use crate::parallel::Executor;

pub const DEFAULT_ALPHA: usize = 10;
pub const DEFAULT_ROUNDS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcquisitionError {
    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("pool point {series_id}:{index} is tagged {provenance:?}, only target-train points may be selected")]
    ForeignPoolPoint { series_id: Arc<str>, index: usize, provenance: Provenance },
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error("pool features have {found} columns, training data {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// One certainty ranking across all clusters, `N / rounds` picks per round.
    #[default]
    Global,
    /// `N / rounds` picks per cluster per round.
    PerCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Context radius in index positions.
    pub alpha: usize,
    pub rounds: usize,
    pub total_budget: usize,
    pub budget_mode: BudgetMode,
}

impl AcquisitionConfig {
    pub fn new(total_budget: usize) -> Self {
        Self { alpha: DEFAULT_ALPHA, rounds: DEFAULT_ROUNDS, total_budget, budget_mode: BudgetMode::Global }
    }

    /// Picks requested in each round; the remainder goes one per round from
    /// the first round on.
    pub fn per_round(&self) -> Vec<usize> {
        let base = self.total_budget / self.rounds;
        let extra = self.total_budget % self.rounds;
        (0..self.rounds).map(|r| base + usize::from(r < extra)).collect()
    }
}

/// Which split of the fold plan a point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    SourceTrain,
    SourceTest,
    TargetTrain,
    TargetTest,
}

/// `|1 - 2p|`, i.e. `|P(norm) - P(anom)|` with `P(norm) = 1 - p`.
pub fn certainty(p_anom: f64) -> Result<f64, AcquisitionError> {
    if !(0.0..=1.0).contains(&p_anom) {
        return Err(AcquisitionError::OutOfRange(p_anom));
    }
    Ok((1.0 - 2.0 * p_anom).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: PointRef,
    pub cluster: usize,
    pub p_anom: f64,
    pub certainty: f64,
}

fn rank_order(a: &Candidate, b: &Candidate) -> core::cmp::Ordering {
    a.certainty.total_cmp(&b.certainty).then_with(|| a.point.cmp(&b.point))
}

/// Sorts in place by ascending certainty, ties by `(series_id, index)`.
pub fn rank_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(rank_order);
}

/// Ranks `(point, P(anom))` pairs; all candidates are tagged cluster 0.
pub fn rank_pool(pool: &[(PointRef, f64)]) -> Result<Vec<Candidate>, AcquisitionError> {
    let mut out = pool
        .iter()
        .map(|(point, p)| Ok(Candidate { point: point.clone(), cluster: 0, p_anom: *p, certainty: certainty(*p)? }))
        .collect::<Result<Vec<_>, AcquisitionError>>()?;
    rank_candidates(&mut out);
    Ok(out)
}

/// Selected positions per series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectedSet {
    by_series: BTreeMap<Arc<str>, BTreeSet<usize>>,
    len: usize,
}

impl SelectedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, point: &PointRef) -> bool {
        let fresh = self.by_series.entry(point.series_id.clone()).or_default().insert(point.index);
        self.len += usize::from(fresh);
        fresh
    }

    pub fn contains(&self, point: &PointRef) -> bool {
        self.by_series.get(&point.series_id).is_some_and(|s| s.contains(&point.index))
    }

    /// True when some selected point of the same series lies within `alpha`.
    pub fn blocks(&self, point: &PointRef, alpha: usize) -> bool {
        self.by_series
            .get(&point.series_id)
            .is_some_and(|s| s.range(point.index.saturating_sub(alpha)..=point.index.saturating_add(alpha)).next().is_some())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Walks `ranked` top-down, taking a point iff it is more than `alpha`
/// positions away from every point already taken (in this batch or in
/// `already`) in the same series. Returns positions into `ranked`, in pick
/// order; may be shorter than `m`.
pub fn select_batch(ranked: &[Candidate], m: usize, alpha: usize, already: &SelectedSet) -> Vec<usize> {
    let mut batch = SelectedSet::new();
    let mut taken = Vec::with_capacity(m);
    for (pos, c) in ranked.iter().enumerate() {
        if taken.len() == m {
            break;
        }
        if already.blocks(&c.point, alpha) || batch.blocks(&c.point, alpha) {
            continue;
        }
        batch.insert(&c.point);
        taken.push(pos);
    }
    taken
}

/// Unlabelled candidates for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub refs: Vec<PointRef>,
    pub features: Matrix,
    pub provenance: Vec<Provenance>,
}

impl Pool {
    pub fn new(refs: Vec<PointRef>, features: Matrix, provenance: Vec<Provenance>) -> Self {
        assert_eq!(refs.len(), features.rows());
        assert_eq!(refs.len(), provenance.len());
        Self { refs, features, provenance }
    }

    pub fn empty(d: usize) -> Self {
        Self { refs: Vec::new(), features: Matrix::zeros(0, d), provenance: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    fn remove(&mut self, positions: &BTreeSet<usize>) {
        let keep: Vec<usize> = (0..self.len()).filter(|i| !positions.contains(i)).collect();
        self.features = self.features.select_rows(&keep);
        self.refs = keep.iter().map(|&i| self.refs[i].clone()).collect();
        self.provenance = keep.iter().map(|&i| self.provenance[i]).collect();
    }
}

/// Training data, current model and pool of one cluster.
#[derive(Debug, Clone)]
pub struct ClusterLearner {
    pub train_x: Matrix,
    pub train_y: Vec<u8>,
    /// `None` until the cluster has any training data; scores as `P(anom) = 0`.
    pub model: Option<ForestModel>,
    pub pool: Pool,
    /// Base seed for this cluster's forests.
    pub forest_seed: u64,
}

impl ClusterLearner {
    pub fn score(&self, x: &Matrix) -> Vec<f64> {
        match &self.model {
            Some(m) => x.iter_rows().map(|r| m.proba_row(r)).collect(),
            None => vec![0.0; x.rows()],
        }
    }

    fn score_pool(&self) -> Vec<f64> {
        self.score(&self.pool.features)
    }
}

/// Supplies true labels for selected points.
pub trait LabelOracle {
    fn label(&mut self, point: &PointRef) -> u8;
}

impl<F: FnMut(&PointRef) -> u8> LabelOracle for F {
    fn label(&mut self, point: &PointRef) -> u8 {
        self(point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// 1-based round.
    pub round: usize,
    pub point: PointRef,
    pub cluster: usize,
    pub p_anom: f64,
    pub certainty: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub records: Vec<SelectionRecord>,
    /// Picks requested per executed round, summed over clusters in per-cluster mode.
    pub requested: Vec<usize>,
    /// Round (1-based) in which no point could be selected, after which the
    /// loop stopped.
    pub exhausted_at: Option<usize>,
}

impl SelectionLog {
    pub fn total(&self) -> usize {
        self.records.len()
    }

    pub fn in_round(&self, round: usize) -> impl Iterator<Item = &SelectionRecord> {
        self.records.iter().filter(move |r| r.round == round)
    }

    /// True when fewer points were labelled than were requested.
    pub fn short(&self) -> bool {
        self.total() < self.requested.iter().sum::<usize>()
    }
}

/// Runs the budgeted select -> label -> retrain loop over all clusters.
///
/// `on_round(round, clusters)` fires after every executed round (1-based)
/// once affected clusters have been refit. A zero budget executes no rounds.
pub fn run_active_learning<O, E, F>(
    clusters: &mut [ClusterLearner],
    config: &AcquisitionConfig,
    forest_params: &ForestParams,
    oracle: &mut O,
    exec: &E,
    mut on_round: F,
) -> Result<SelectionLog, AcquisitionError>
where
    O: LabelOracle + ?Sized,
    E: Executor,
    F: FnMut(usize, &[ClusterLearner]),
{
    if config.rounds == 0 {
        return Err(AcquisitionError::ZeroRounds);
    }
    for c in clusters.iter() {
        if let Some(i) = c.pool.provenance.iter().position(|p| *p != Provenance::TargetTrain) {
            return Err(AcquisitionError::ForeignPoolPoint {
                series_id: c.pool.refs[i].series_id.clone(),
                index: c.pool.refs[i].index,
                provenance: c.pool.provenance[i],
            });
        }
        if c.pool.features.cols() != c.train_x.cols() {
            return Err(AcquisitionError::DimensionMismatch { expected: c.train_x.cols(), found: c.pool.features.cols() });
        }
    }

    let mut log = SelectionLog::default();
    if config.total_budget == 0 {
        return Ok(log);
    }
    let mut selected = SelectedSet::new();

    for (r, &quota) in config.per_round().iter().enumerate() {
        let round = r + 1;
        log.requested.push(match config.budget_mode {
            BudgetMode::Global => quota,
            BudgetMode::PerCluster => quota * clusters.len(),
        });
        let scores: Vec<Vec<f64>> = exec.map(clusters.len(), |c| clusters[c].score_pool());

        let mut picks: Vec<Candidate> = Vec::new();
        let candidates_of = |c: usize| -> Result<Vec<Candidate>, AcquisitionError> {
            clusters[c]
                .pool
                .refs
                .iter()
                .zip(&scores[c])
                .map(|(point, &p)| Ok(Candidate { point: point.clone(), cluster: c, p_anom: p, certainty: certainty(p)? }))
                .collect()
        };
        match config.budget_mode {
            BudgetMode::Global => {
                let mut ranked = Vec::new();
                for c in 0..clusters.len() {
                    ranked.extend(candidates_of(c)?);
                }
                rank_candidates(&mut ranked);
                for pos in select_batch(&ranked, quota, config.alpha, &selected) {
                    picks.push(ranked[pos].clone());
                }
            }
            BudgetMode::PerCluster => {
                for c in 0..clusters.len() {
                    let mut ranked = candidates_of(c)?;
                    rank_candidates(&mut ranked);
                    for pos in select_batch(&ranked, quota, config.alpha, &selected) {
                        selected.insert(&ranked[pos].point);
                        picks.push(ranked[pos].clone());
                    }
                }
            }
        }

        if quota > 0 && picks.is_empty() {
            log.exhausted_at = Some(round);
            break;
        }

        let before: usize = clusters.iter().map(|c| c.train_y.len()).sum();
        let mut removed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); clusters.len()];
        let mut touched = vec![false; clusters.len()];
        for pick in &picks {
            selected.insert(&pick.point);
            let learner = &mut clusters[pick.cluster];
            let pos = learner.pool.refs.iter().position(|p| *p == pick.point).expect("picked from this pool");
            let label = oracle.label(&pick.point);
            learner.train_x.push_row(learner.pool.features.row(pos));
            learner.train_y.push(label);
            removed[pick.cluster].insert(pos);
            touched[pick.cluster] = true;
            log.records.push(SelectionRecord {
                round,
                point: pick.point.clone(),
                cluster: pick.cluster,
                p_anom: pick.p_anom,
                certainty: pick.certainty,
                label,
            });
        }
        for (c, positions) in removed.iter().enumerate() {
            if !positions.is_empty() {
                clusters[c].pool.remove(positions);
            }
        }
        debug_assert_eq!(clusters.iter().map(|c| c.train_y.len()).sum::<usize>(), before + picks.len());

        let refits: Vec<Option<Result<ForestModel, ForestError>>> = exec.map(clusters.len(), |c| {
            if !touched[c] {
                return None;
            }
            let learner = &clusters[c];
            let params = forest_params.clone().with_seed(refit_seed(learner.forest_seed, round));
            Some(forest::fit_with(&learner.train_x, &learner.train_y, &params, exec))
        });
        for (c, refit) in refits.into_iter().enumerate() {
            if let Some(model) = refit {
                clusters[c].model = Some(model?);
            }
        }
        on_round(round, clusters);
    }
    Ok(log)
}
