//! Symmetric eigendecomposition (cyclic Jacobi) and matrix powers built on it.
//!
//! The matrices here are feature covariances (24 x 24), so the O(n^3) per
//! sweep cost of Jacobi is irrelevant and its accuracy on symmetric input is
//! excellent: eigenvalues come out with small relative error even when they
//! span many orders of magnitude.

use alloc::vec::Vec;

use crate::matrix::Matrix;

/// Eigenvalues below this are clamped before taking powers.
pub const EIGEN_FLOOR: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

/// Eigendecomposition of a symmetric matrix. Only the upper triangle is read.
pub fn symmetric_eigen(m: &Matrix) -> SymmetricEigen {
    assert_eq!(m.rows(), m.cols(), "eigendecomposition needs a square matrix");
    let n = m.rows();
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let mut v = Matrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            diag += a[(i, i)] * a[(i, i)];
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= f64::EPSILON * f64::EPSILON * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    SymmetricEigen { values, vectors }
}

/// `V diag(max(l, floor)^p) V^T` for a symmetric matrix.
pub fn symmetric_power(m: &Matrix, power: f64, floor: f64) -> Matrix {
    let eig = symmetric_eigen(m);
    let n = m.rows();
    let scaled: Vec<f64> = eig.values.iter().map(|&l| libm::pow(l.max(floor), power)).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (k, &w) in scaled.iter().enumerate() {
                s += eig.vectors[(i, k)] * w * eig.vectors[(j, k)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

pub fn sqrt_psd(m: &Matrix) -> Matrix {
    symmetric_power(m, 0.5, EIGEN_FLOOR)
}

pub fn inv_sqrt_psd(m: &Matrix) -> Matrix {
    symmetric_power(m, -0.5, EIGEN_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let mut b = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = standard_normal(&mut rng);
            }
        }
        b.transpose().matmul(&b).unwrap().add(&Matrix::identity(n).scale(0.5))
    }

    #[test]
    fn reconstructs_input() {
        let m = random_spd(24, 3);
        let eig = symmetric_eigen(&m);
        let d = Matrix::from_diagonal(&eig.values);
        let rec = eig.vectors.matmul(&d).unwrap().matmul(&eig.vectors.transpose()).unwrap();
        assert!(rec.sub(&m).max_abs() < 1e-10 * m.max_abs());
        let vtv = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
        assert!(vtv.sub(&Matrix::identity(24)).max_abs() < 1e-12);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn matches_nalgebra_eigenvalues() {
        let m = random_spd(12, 9);
        let na = nalgebra::DMatrix::from_row_slice(12, 12, m.as_slice());
        let mut expected: std::vec::Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
        expected.sort_by(f64::total_cmp);
        let ours = symmetric_eigen(&m).values;
        for (a, b) in ours.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn square_roots_satisfy_defining_identities() {
        let c = random_spd(24, 11);
        let root = sqrt_psd(&c);
        let inv_root = inv_sqrt_psd(&c);
        assert!(root.matmul(&root).unwrap().sub(&c).max_abs() < 1e-8);
        let whitened = inv_root.matmul(&c).unwrap().matmul(&inv_root).unwrap();
        assert!(whitened.sub(&Matrix::identity(24)).max_abs() < 1e-8);
    }

    #[test]
    fn diagonal_powers_are_exact() {
        let m = Matrix::from_diagonal(&[4.0; 5]);
        let r = sqrt_psd(&m);
        assert!(r.sub(&Matrix::identity(5).scale(2.0)).max_abs() < 1e-15);
        let ir = inv_sqrt_psd(&m);
        assert!(ir.sub(&Matrix::identity(5).scale(0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn singular_input_is_floored() {
        let m = Matrix::zeros(3, 3);
        let ir = inv_sqrt_psd(&m);
        assert!(ir.all_finite());
        assert!((ir[(0, 0)] - 1e6).abs() < 1e-3);
    }
}
