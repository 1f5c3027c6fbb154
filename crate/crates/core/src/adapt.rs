//! CORAL alignment of source features to a target distribution.
//!
//! With `Cs = cov(Xs) + lambda I` and `Ct = cov(Xt) + lambda I`, the map is
//! `A = Cs^(-1/2) Ct^(1/2)`. Under [`MeanAlignment::Recenter`] rows are
//! transformed as `(x - mean_s) A + mean_t`, which matches both the first and
//! second moments of the target.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{inv_sqrt_psd, sqrt_psd};
use crate::matrix::Matrix;

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdaptError {
    #[error("{side} has {rows} rows; at least 2 are needed when lambda = 0")]
    InsufficientRows { side: &'static str, rows: usize },
    #[error("{side} is empty")]
    Empty { side: &'static str },
    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MeanAlignment {
    /// Center on the source mean, shift to the target mean.
    #[default]
    Recenter,
    /// Plain `X A`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoralTransform {
    pub matrix: Matrix,
    pub lambda: f64,
    pub source_mean: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub means: MeanAlignment,
    /// (source rows, target rows) used for fitting.
    pub fitted_on: (usize, usize),
}

/// `(cs + lambda I)^(-1/2) (ct + lambda I)^(1/2)`.
pub fn coral_matrix(cs: &Matrix, ct: &Matrix, lambda: f64) -> Matrix {
    let d = cs.rows();
    let reg = Matrix::identity(d).scale(lambda);
    let cs = cs.add(&reg);
    let ct = ct.add(&reg);
    inv_sqrt_psd(&cs).matmul(&sqrt_psd(&ct)).expect("square matrices of equal size")
}

pub fn fit_coral(xs: &Matrix, xt: &Matrix, lambda: f64) -> Result<CoralTransform, AdaptError> {
    fit_coral_with(xs, xt, lambda, MeanAlignment::Recenter)
}

pub fn fit_coral_with(
    xs: &Matrix,
    xt: &Matrix,
    lambda: f64,
    means: MeanAlignment,
) -> Result<CoralTransform, AdaptError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(AdaptError::InvalidLambda(lambda));
    }
    if xs.cols() != xt.cols() {
        return Err(AdaptError::DimensionMismatch { expected: xs.cols(), found: xt.cols() });
    }
    for (side, m) in [("source", xs), ("target", xt)] {
        if m.is_empty() {
            return Err(AdaptError::Empty { side });
        }
        if lambda == 0.0 && m.rows() < 2 {
            return Err(AdaptError::InsufficientRows { side, rows: m.rows() });
        }
    }
    let matrix = coral_matrix(&xs.covariance(), &xt.covariance(), lambda);
    Ok(CoralTransform {
        matrix,
        lambda,
        source_mean: xs.column_means(),
        target_mean: xt.column_means(),
        means,
        fitted_on: (xs.rows(), xt.rows()),
    })
}

impl CoralTransform {
    /// Identity map of dimension `d` (used when a cluster cannot be adapted).
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: Matrix::identity(d),
            lambda: 0.0,
            source_mean: alloc::vec![0.0; d],
            target_mean: alloc::vec![0.0; d],
            means: MeanAlignment::None,
            fitted_on: (0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix, AdaptError> {
        let d = self.dim();
        if x.cols() != d {
            return Err(AdaptError::DimensionMismatch { expected: d, found: x.cols() });
        }
        let mut out = Matrix::zeros(x.rows(), d);
        let mut centered = alloc::vec![0.0; d];
        for i in 0..x.rows() {
            let row = x.row(i);
            match self.means {
                MeanAlignment::Recenter => {
                    for ((c, v), m) in centered.iter_mut().zip(row).zip(&self.source_mean) {
                        *c = v - m;
                    }
                }
                MeanAlignment::None => centered.copy_from_slice(row),
            }
            let o = out.row_mut(i);
            if self.means == MeanAlignment::Recenter {
                o.copy_from_slice(&self.target_mean);
            }
            for (k, &ck) in centered.iter().enumerate() {
                if ck == 0.0 {
                    continue;
                }
                for (oj, &akj) in o.iter_mut().zip(self.matrix.row(k)) {
                    *oj += ck * akj;
                }
            }
        }
        Ok(out)
    }
}
