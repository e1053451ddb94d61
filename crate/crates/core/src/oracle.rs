//! Reference routines used to cross-check the main numerical paths.
//!
//! Nothing here calls into `linalg::svd` or nalgebra's decompositions: the
//! eigensolver is a plain cyclic Jacobi iteration and projectors are formed
//! explicitly, so agreement with the production path is meaningful.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::SubspaceBasis;

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted descending and the matching unit eigenvectors
/// as columns.
pub fn jacobi_eigen(sym: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    assert_eq!(n, sym.ncols(), "jacobi_eigen needs a square matrix");
    let mut a: Vec<f64> = (0..n * n).map(|i| sym[(i / n, i % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let at = |a: &[f64], i: usize, j: usize| a[i * n + j];

    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            diag += at(&a, i, i) * at(&a, i, i);
            for j in 0..n {
                if i != j {
                    off += at(&a, i, j) * at(&a, i, j);
                }
            }
        }
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = at(&a, p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = at(&a, p, p);
                let aqq = at(&a, q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| at(&a, y, y).total_cmp(&at(&a, x, x)));
    let values = order.iter().map(|&i| at(&a, i, i)).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| v[i * n + order[j]]);
    (values, vectors)
}

/// Singular values (descending, `min(rows, cols)` of them) as square roots of
/// the eigenvalues of the smaller Gram matrix.
pub fn singular_values_via_gram(m: &DMatrix<f64>) -> Vec<f64> {
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let (values, _) = jacobi_eigen(&gram);
    values.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Top-k right singular vectors of `m` via the Gram eigenvectors.
pub fn top_right_vectors_via_gram(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (_, vecs) = jacobi_eigen(&(m.transpose() * m));
    vecs.columns(0, k).into_owned()
}

/// `(I − B·Bᵀ)·x` with the projector materialized.
pub fn explicit_complement(b: &SubspaceBasis, x: &DVector<f64>) -> DVector<f64> {
    let n = b.dim();
    let proj = b.vectors() * b.vectors().transpose();
    (DMatrix::identity(n, n) - proj) * x
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration.
pub fn power_iteration(sym: &DMatrix<f64>, iters: usize) -> f64 {
    let n = sym.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = sym * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = x.dot(&y);
        x = y / norm;
    }
    lambda
}

/// Suppression computed literally: stack `token` on top of `rhat`, take the
/// top-k right singular subspace of the stack from its Gram matrix, and
/// remove the token's component in that subspace.
pub fn suppress_via_gram(token: &DVector<f64>, rhat: &DMatrix<f64>, k: usize) -> DVector<f64> {
    let d = rhat.ncols();
    let mut stacked = DMatrix::zeros(rhat.nrows() + 1, d);
    stacked.row_mut(0).copy_from(&token.transpose());
    stacked.rows_mut(1, rhat.nrows()).copy_from(rhat);
    let top = top_right_vectors_via_gram(&stacked, k);
    token - &top * top.tr_mul(token)
}
