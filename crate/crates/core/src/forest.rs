//! Random forest of CART trees for binary anomaly labels.
//!
//! Trees are grown on bootstrap resamples with Gini splits over a random
//! subset of candidate features per node, to purity by default. Thresholds
//! sit at the midpoint between consecutive distinct values and rows with
//! `x <= threshold` go left. Among equally good splits the lowest feature
//! index wins, then the lowest threshold.
//!
//! Each tree draws from its own stream seeded by `derive_seed(seed, "tree", t)`:
//! first the `n` bootstrap indices, then the per-node feature draws. The
//! out-of-bag pass replays the bootstrap draws instead of storing in-bag
//! masks, so memory stays at one mask at a time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::parallel::{Executor, Sequential};
use crate::rng::{child_rng, derive_seed, Rng};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {value} at row {row} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: u8 },
    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    /// `floor(sqrt(d))`, at least 1.
    Sqrt,
    Count(usize),
    All,
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => (libm::floor(libm::sqrt(d as f64)) as usize).max(1),
            MaxFeatures::Count(c) => c.min(d),
            MaxFeatures::All => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub compute_oob: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            max_features: MaxFeatures::Sqrt,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            compute_oob: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, d: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be positive"));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidParams("min_samples_split must be at least 2"));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams("min_samples_leaf must be positive"));
        }
        if let MaxFeatures::Count(c) = self.max_features {
            if c == 0 || c > d {
                return Err(ForestError::InvalidParams("max_features must be in 1..=n_features"));
            }
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::InvalidParams("max_depth must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Training sample counts (with bootstrap multiplicity) per class.
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, row: &[f64]) -> [u32; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return *counts,
            }
        }
    }

    /// Fraction of class-1 training samples in the leaf reached by `row`.
    pub fn proba(&self, row: &[f64]) -> f64 {
        let [c0, c1] = self.leaf(row);
        f64::from(c1) / f64::from(c0 + c1)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// Out-of-bag misclassification rate; `None` when disabled or when some
    /// sample was in-bag for every tree.
    pub oob_error: Option<f64>,
    pub params: ForestParams,
    pub n_features: usize,
}

fn bootstrap_counts(n: usize, rng: &mut Rng) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1;
    }
    counts
}

struct Best {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree over the distinct rows of a bootstrap sample; each row
/// carries its draw count as a weight, which is equivalent to growing on the
/// sample with duplicates expanded.
struct Grower<'a> {
    /// Column-major order keys of the training matrix.
    cols: &'a [u64],
    n: usize,
    y: &'a [u8],
    weight: Vec<u32>,
    d: usize,
    params: &'a ForestParams,
    max_features: usize,
    /// (order key, weight | label << 31)
    pairs: Vec<(u64, u32)>,
    features: Vec<usize>,
}

const LABEL_BIT: u32 = 1 << 31;

impl Grower<'_> {
    fn value(&self, row: u32, feature: usize) -> f64 {
        from_key(self.cols[feature * self.n + row as usize])
    }

    fn class_counts(&self, idx: &[u32]) -> [u32; 2] {
        let mut counts = [0u32; 2];
        for &i in idx {
            counts[usize::from(self.y[i as usize])] += self.weight[i as usize];
        }
        counts
    }

    fn best_split(&mut self, idx: &[u32], counts: [u32; 2], rng: &mut Rng) -> Option<Best> {
        let m = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let total = (counts[0] + counts[1]) as usize;
        let (total0, total1) = (counts[0] as usize, counts[1] as usize);
        let mut best: Option<Best> = None;
        let mut evaluated = 0;
        // Fisher-Yates draw without replacement; constant features do not
        // count towards max_features.
        for drawn in 0..self.d {
            if evaluated == self.max_features {
                break;
            }
            let j = rng.gen_range(drawn..self.d);
            self.features.swap(drawn, j);
            let f = self.features[drawn];

            let column = &self.cols[f * self.n..(f + 1) * self.n];
            self.pairs.clear();
            for &i in idx {
                let i = i as usize;
                self.pairs.push((column[i], self.weight[i] | (u32::from(self.y[i]) << 31)));
            }
            self.pairs.sort_unstable_by_key(|p| p.0);
            if from_key(self.pairs[0].0) == from_key(self.pairs[m - 1].0) {
                continue;
            }
            evaluated += 1;

            let (mut l0, mut l1) = (0usize, 0usize);
            for p in 1..m {
                let (ka, tag) = self.pairs[p - 1];
                let w = (tag & !LABEL_BIT) as usize;
                if tag & LABEL_BIT != 0 {
                    l1 += w;
                } else {
                    l0 += w;
                }
                let kb = self.pairs[p].0;
                let left = l0 + l1;
                if ka == kb {
                    continue;
                }
                let (a, b) = (from_key(ka), from_key(kb));
                if a == b || left < min_leaf || total - left < min_leaf {
                    continue;
                }
                let (r0, r1) = (total0 - l0, total1 - l1);
                let score =
                    ((l0 * l0 + l1 * l1) as f64) / left as f64 + ((r0 * r0 + r1 * r1) as f64) / (total - left) as f64;
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b || !threshold.is_finite() {
                    threshold = a;
                }
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        score > cur.score
                            || (score == cur.score
                                && (f < cur.feature || (f == cur.feature && threshold < cur.threshold)))
                    }
                };
                if better {
                    best = Some(Best { score, feature: f, threshold });
                }
            }
        }
        best
    }

    fn grow(&mut self, mut idx: Vec<u32>, rng: &mut Rng) -> Tree {
        let mut nodes = vec![Node::Leaf { counts: [0, 0] }];
        // (node id, start, end, depth)
        let mut stack = vec![(0usize, 0usize, idx.len(), 0usize)];
        while let Some((node, start, end, depth)) = stack.pop() {
            let slice = &idx[start..end];
            let counts = self.class_counts(slice);
            let m = (counts[0] + counts[1]) as usize;
            let stop = m < self.params.min_samples_split
                || m < 2 * self.params.min_samples_leaf
                || counts[0] == 0
                || counts[1] == 0
                || self.params.max_depth.is_some_and(|md| depth >= md);
            let split = if stop { None } else { self.best_split(slice, counts, rng) };
            let Some(best) = split else {
                nodes[node] = Node::Leaf { counts };
                continue;
            };
            // partition in place: left block holds x <= threshold
            let slice = &mut idx[start..end];
            let mut lo = 0;
            for k in 0..slice.len() {
                if self.value(slice[k], best.feature) <= best.threshold {
                    slice.swap(lo, k);
                    lo += 1;
                }
            }
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { counts: [0, 0] });
            nodes.push(Node::Leaf { counts: [0, 0] });
            nodes[node] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
            stack.push((right, start + lo, end, depth + 1));
            stack.push((left, start, start + lo, depth + 1));
        }
        Tree { nodes }
    }
}

fn check_inputs(x: &Matrix, y: &[u8]) -> Result<(), ForestError> {
    if x.rows() != y.len() {
        return Err(ForestError::LengthMismatch { rows: x.rows(), labels: y.len() });
    }
    if x.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if let Some(row) = y.iter().position(|&v| v > 1) {
        return Err(ForestError::NonBinaryLabel { row, value: y[row] });
    }
    Ok(())
}

/// Grows tree `t` of the forest described by `params`.
pub fn grow_tree(x: &Matrix, y: &[u8], params: &ForestParams, t: usize) -> Tree {
    grow_tree_columns(&column_keys(x), y, params, t)
}

/// Maps `f64` to `u64` so that integer order equals `f64::total_cmp` order.
fn to_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn from_key(k: u64) -> f64 {
    f64::from_bits(if k >> 63 == 1 { k & !(1 << 63) } else { !k })
}

fn column_keys(x: &Matrix) -> Vec<u64> {
    x.transpose().into_vec().into_iter().map(to_key).collect()
}

fn grow_tree_columns(cols: &[u64], y: &[u8], params: &ForestParams, t: usize) -> Tree {
    let n = y.len();
    let d = cols.len() / n;
    let mut rng = child_rng(params.seed, "tree", t as u64);
    let weight = if params.bootstrap { bootstrap_counts(n, &mut rng) } else { vec![1; n] };
    let idx: Vec<u32> = (0..n as u32).filter(|&i| weight[i as usize] > 0).collect();
    let mut grower = Grower {
        cols,
        n,
        y,
        weight,
        d,
        params,
        max_features: params.max_features.resolve(d),
        pairs: Vec::with_capacity(idx.len()),
        features: (0..d).collect(),
    };
    grower.grow(idx, &mut rng)
}

pub fn fit(x: &Matrix, y: &[u8], params: &ForestParams) -> Result<ForestModel, ForestError> {
    fit_with(x, y, params, &Sequential)
}

/// Like [`fit`], with trees grown through `exec`. Output does not depend on
/// the executor.
pub fn fit_with<E: Executor>(x: &Matrix, y: &[u8], params: &ForestParams, exec: &E) -> Result<ForestModel, ForestError> {
    check_inputs(x, y)?;
    params.validate(x.cols())?;
    let cols = column_keys(x);
    let trees = exec.map(params.n_trees, |t| grow_tree_columns(&cols, y, params, t));
    let mut model = ForestModel { trees, oob_error: None, params: params.clone(), n_features: x.cols() };
    if params.bootstrap && params.compute_oob {
        model.oob_error = model.out_of_bag_error(x, y);
    }
    Ok(model)
}

impl ForestModel {
    fn out_of_bag_error(&self, x: &Matrix, y: &[u8]) -> Option<f64> {
        let n = x.rows();
        let mut sum = vec![0.0; n];
        let mut votes = vec![0u32; n];
        for (t, tree) in self.trees.iter().enumerate() {
            let mut rng = child_rng(self.params.seed, "tree", t as u64);
            let inbag = bootstrap_counts(n, &mut rng);
            for i in 0..n {
                if inbag[i] == 0 {
                    sum[i] += tree.proba(x.row(i));
                    votes[i] += 1;
                }
            }
        }
        if votes.contains(&0) {
            return None;
        }
        let wrong = (0..n)
            .filter(|&i| {
                let p = sum[i] / f64::from(votes[i]);
                u8::from(p >= DEFAULT_THRESHOLD) != y[i]
            })
            .count();
        Some(wrong as f64 / n as f64)
    }

    /// Mean over trees of the leaf class-1 fraction.
    pub fn proba_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.proba(row)).sum();
        s / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ForestError> {
        if x.cols() != self.n_features {
            return Err(ForestError::DimensionMismatch { expected: self.n_features, found: x.cols() });
        }
        Ok(x.iter_rows().map(|r| self.proba_row(r)).collect())
    }

    /// Label 1 iff `P(anom) >= threshold`.
    pub fn predict(&self, x: &Matrix, threshold: f64) -> Result<Vec<u8>, ForestError> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| u8::from(p >= threshold)).collect())
    }
}

/// Seed for refitting a model after active-learning round `round`.
pub fn refit_seed(base: u64, round: usize) -> u64 {
    derive_seed(base, "refit", round as u64)
}
