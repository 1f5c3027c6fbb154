//! k-means++ seeding with Lloyd refinement, used to split the target domain
//! into sub-domains and route source points to them.
//!
//! Features are z-scored per column with statistics from the fitting set
//! before clustering; the scaler is stored with the model and reused by
//! [`assign`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::child_rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("k = {k} exceeds the number of rows ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("only {distinct} distinct rows, fewer than k = {k}")]
    DegenerateInput { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("restarts must be at least 1")]
    ZeroRestarts,
    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, restarts: 10, max_iter: 300, tol: 1e-6, standardize: true }
    }
}

/// Per-column affine map `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    /// Column means and population standard deviations; zero-variance
    /// columns get scale 1.
    pub fn fit(x: &Matrix) -> Self {
        let mean = x.column_means();
        let mut var = vec![0.0; x.cols()];
        for r in x.iter_rows() {
            for ((v, xi), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let n = x.rows().max(1) as f64;
        let scale = var.iter().map(|v| libm::sqrt(v / n)).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i));
        }
        out
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }

    pub fn inverse_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = *v * s + m;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    /// Centroids in scaled space.
    pub centroids: Matrix,
    pub scaler: Scaler,
    pub seed: u64,
    /// Sum of squared scaled distances to the nearest centroid.
    pub inertia: f64,
    pub restarts: usize,
    /// Restart that produced the kept model.
    pub best_restart: usize,
    /// Inertia after each assignment step of the kept restart.
    pub inertia_trace: Vec<f64>,
}

impl KMeansModel {
    /// Centroids mapped back to the original feature units.
    pub fn centroids_unscaled(&self) -> Matrix {
        let mut c = self.centroids.clone();
        for i in 0..c.rows() {
            self.scaler.inverse_row(c.row_mut(i));
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index (lowest index on ties) and squared distance.
fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn count_distinct_rows(x: &Matrix) -> usize {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let cmp = |a: &usize, b: &usize| {
        x.row(*a).iter().zip(x.row(*b)).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    };
    order.sort_by(cmp);
    let mut distinct = usize::from(!order.is_empty());
    for w in order.windows(2) {
        if cmp(&w[0], &w[1]).is_ne() {
            distinct += 1;
        }
    }
    distinct
}

fn seed_plus_plus(x: &Matrix, k: usize, rng: &mut crate::rng::Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(0, x.cols());
    centroids.push_row(x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, centroids.row(0))).collect();
    while centroids.rows() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.gen_range(0..n)
        };
        centroids.push_row(x.row(pick));
        let c = centroids.rows() - 1;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(c)));
        }
    }
    centroids
}

struct Run {
    centroids: Matrix,
    inertia: f64,
    trace: Vec<f64>,
}

fn lloyd(x: &Matrix, mut centroids: Matrix, max_iter: usize, shift_tol: f64) -> Run {
    let (n, d, k) = (x.rows(), x.cols(), centroids.rows());
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();

    let assign_all = |centroids: &Matrix, labels: &mut [usize], dists: &mut [f64]| -> f64 {
        let mut inertia = 0.0;
        for i in 0..n {
            let (j, dist) = nearest(x.row(i), centroids);
            labels[i] = j;
            dists[i] = dist;
            inertia += dist;
        }
        inertia
    };

    let mut inertia = assign_all(&centroids, &mut labels, &mut dists);
    trace.push(inertia);
    for _ in 0..max_iter {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut next = Matrix::zeros(k, d);
        let mut taken = vec![false; n];
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let c = count as f64;
                for (o, s) in next.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *o = s / c;
                }
            } else {
                // reseed from the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n");
                taken[far] = true;
                dists[far] = 0.0;
                next.row_mut(j).copy_from_slice(x.row(far));
            }
        }
        let shift: f64 = centroids.iter_rows().zip(next.iter_rows()).map(|(a, b)| sq_dist(a, b)).sum();
        centroids = next;
        let updated = assign_all(&centroids, &mut labels, &mut dists);
        debug_assert!(
            updated <= inertia * (1.0 + 1e-9) + 1e-12,
            "inertia increased from {inertia} to {updated}"
        );
        inertia = updated;
        trace.push(inertia);
        if shift <= shift_tol {
            break;
        }
    }
    Run { centroids, inertia, trace }
}

/// Best-of-`restarts` k-means++ / Lloyd fit.
///
/// Lloyd iterations stop once the summed squared centroid shift falls to
/// `tol` times the mean per-column variance of the (scaled) data, or after
/// `max_iter` updates. Restarts draw from independent child seeds; the
/// lowest inertia wins, ties going to the earlier restart.
pub fn kmeanspp_fit(x: &Matrix, params: &KMeansParams) -> Result<KMeansModel, ClusterError> {
    let n = x.rows();
    if params.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if params.restarts == 0 {
        return Err(ClusterError::ZeroRestarts);
    }
    if params.k > n {
        return Err(ClusterError::KTooLarge { k: params.k, n });
    }
    let scaler = if params.standardize { Scaler::fit(x) } else { Scaler::identity(x.cols()) };
    let z = scaler.transform(x);
    let distinct = count_distinct_rows(&z);
    if distinct < params.k {
        return Err(ClusterError::DegenerateInput { k: params.k, distinct });
    }

    let means = z.column_means();
    let mut mean_var = 0.0;
    for r in z.iter_rows() {
        mean_var += r.iter().zip(&means).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
    }
    mean_var /= (n * z.cols().max(1)) as f64;
    let shift_tol = params.tol * mean_var;

    let mut best: Option<(usize, Run)> = None;
    for r in 0..params.restarts {
        let mut rng = child_rng(params.seed, "kmeans-restart", r as u64);
        let init = seed_plus_plus(&z, params.k, &mut rng);
        let run = lloyd(&z, init, params.max_iter, shift_tol);
        if best.as_ref().is_none_or(|(_, b)| run.inertia < b.inertia) {
            best = Some((r, run));
        }
    }
    let (best_restart, run) = best.expect("restarts >= 1");
    Ok(KMeansModel {
        k: params.k,
        centroids: run.centroids,
        scaler,
        seed: params.seed,
        inertia: run.inertia,
        restarts: params.restarts,
        best_restart,
        inertia_trace: run.trace,
    })
}

/// Nearest-centroid label for each row of `x` (raw feature units).
pub fn assign(model: &KMeansModel, x: &Matrix) -> Result<Vec<usize>, ClusterError> {
    if x.cols() != model.dim() {
        return Err(ClusterError::DimensionMismatch { expected: model.dim(), found: x.cols() });
    }
    let mut buf = vec![0.0; x.cols()];
    Ok(x.iter_rows()
        .map(|r| {
            buf.copy_from_slice(r);
            model.scaler.transform_row(&mut buf);
            nearest(&buf, &model.centroids).0
        })
        .collect())
}
