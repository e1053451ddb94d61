//! Dense linear-algebra kernel: thin SVD with a fixed sign convention,
//! rank-k truncation, orthonormal subspace bases and orthogonal projections.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; token embeddings are rows of such
//! matrices, or standalone `DVector<f64>` values when handled one at a time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default tolerance for `‖BᵀB − I‖_F` on bases computed in memory.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

fn ensure_nonempty(m: &Matrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "matrix must be non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `‖MᵀM − I‖_F` for a matrix whose columns should be orthonormal.
pub fn orthonormality_deviation(m: &Matrix) -> f64 {
    let gram = m.tr_mul(m);
    (gram - Matrix::identity(m.ncols(), m.ncols())).norm()
}

/// Thin singular value decomposition `m = u · diag(sigma) · vᵀ`.
///
/// `r = min(rows, cols)`; `sigma` is sorted descending and, in every column
/// of `v`, the entry of largest magnitude (lowest index on ties) is
/// non-negative. The matching column of `u` is flipped with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    u: Matrix,
    sigma: Vector,
    v: Matrix,
}

impl SvdFactors {
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn sigma(&self) -> &Vector {
        &self.sigma
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    /// Number of singular triplets, `min(rows, cols)`.
    pub fn rank_bound(&self) -> usize {
        self.sigma.len()
    }

    pub fn into_parts(self) -> (Matrix, Vector, Matrix) {
        (self.u, self.sigma, self.v)
    }

    pub fn reconstruct(&self) -> Matrix {
        scaled_product(&self.u, &self.sigma, &self.v, self.rank_bound())
    }

    fn check_rank(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.rank_bound() {
            return Err(Error::RankOutOfBounds {
                k,
                max: self.rank_bound(),
            });
        }
        Ok(())
    }
}

/// `u[:, :k] · diag(sigma[:k]) · v[:, :k]ᵀ`
pub(crate) fn scaled_product(u: &Matrix, sigma: &Vector, v: &Matrix, k: usize) -> Matrix {
    let mut us = u.columns(0, k).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= sigma[j];
    }
    us * v.columns(0, k).transpose()
}

pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    ensure_nonempty(m)?;
    ensure_finite(m)?;
    let (u, sigma, v) = if m.nrows() >= m.ncols() {
        tall_svd(m)
    } else {
        let (u, sigma, v) = tall_svd(&m.transpose());
        (v, sigma, u)
    };
    let mut f = sorted(u, sigma, v);
    fix_signs(&mut f);
    Ok(f)
}

/// SVD of a matrix with rows >= cols. Strongly rectangular inputs are first
/// reduced to their `cols × cols` triangular factor.
fn tall_svd(m: &Matrix) -> (Matrix, Vector, Matrix) {
    let (rows, cols) = m.shape();
    if rows > 2 * cols {
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let (ur, sigma, v) = plain_svd(r);
        (q * ur, sigma, v)
    } else {
        plain_svd(m.clone())
    }
}

fn plain_svd(m: Matrix) -> (Matrix, Vector, Matrix) {
    let svd = nalgebra::linalg::SVD::new(m, true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v = svd
        .v_t
        .expect("right singular vectors requested")
        .transpose();
    (u, svd.singular_values, v)
}

fn sorted(u: Matrix, sigma: Vector, v: Matrix) -> SvdFactors {
    let r = sigma.len();
    let mut order: Vec<usize> = (0..r).collect();
    // stable: equal values keep backend order
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return SvdFactors { u, sigma, v };
    }
    let u_sorted = Matrix::from_fn(u.nrows(), r, |i, j| u[(i, order[j])]);
    let v_sorted = Matrix::from_fn(v.nrows(), r, |i, j| v[(i, order[j])]);
    let sigma_sorted = Vector::from_fn(r, |j, _| sigma[order[j]]);
    SvdFactors {
        u: u_sorted,
        sigma: sigma_sorted,
        v: v_sorted,
    }
}

fn fix_signs(f: &mut SvdFactors) {
    for j in 0..f.rank_bound() {
        let col = f.v.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            f.v.column_mut(j).neg_mut();
            f.u.column_mut(j).neg_mut();
        }
        // exact zeros in sigma can come back as -0.0
        if f.sigma[j] == 0.0 {
            f.sigma[j] = 0.0;
        }
    }
}

/// Best rank-k approximation `Σ_{i≤k} σ_i u_i v_iᵀ`.
pub fn truncate_reconstruct(f: &SvdFactors, k: usize) -> Result<Matrix> {
    f.check_rank(k)?;
    Ok(scaled_product(&f.u, &f.sigma, &f.v, k))
}

/// The top-k right singular vectors as a subspace basis.
pub fn basis(f: &SvdFactors, k: usize) -> Result<SubspaceBasis> {
    f.check_rank(k)?;
    Ok(SubspaceBasis {
        vectors: f.v.columns(0, k).into_owned(),
    })
}

/// Orthonormal basis of a k-dimensional subspace of `R^dim`, stored as the
/// columns of a `dim × k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    vectors: Matrix,
}

impl SubspaceBasis {
    pub fn new(vectors: Matrix) -> Result<Self> {
        Self::with_tolerance(vectors, ORTHONORMAL_TOL)
    }

    /// Accepts columns whose Gram matrix is within `tol` of the identity.
    pub fn with_tolerance(vectors: Matrix, tol: f64) -> Result<Self> {
        if vectors.ncols() == 0 || vectors.ncols() > vectors.nrows() {
            return Err(Error::RankOutOfBounds {
                k: vectors.ncols(),
                max: vectors.nrows(),
            });
        }
        ensure_finite(&vectors)?;
        let deviation = orthonormality_deviation(&vectors);
        if deviation > tol {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { vectors })
    }

    /// Orthonormalizes arbitrary full-column-rank vectors via QR.
    pub fn from_span(vectors: &Matrix) -> Result<Self> {
        ensure_nonempty(vectors)?;
        ensure_finite(vectors)?;
        let k = vectors.ncols();
        if k > vectors.nrows() {
            return Err(Error::RankOutOfBounds {
                k,
                max: vectors.nrows(),
            });
        }
        let qr = vectors.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
            return Err(Error::ShapeMismatch(
                "spanning vectors are linearly dependent".into(),
            ));
        }
        Self::new(qr.q())
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn column(&self, j: usize) -> Vector {
        self.vectors.column(j).into_owned()
    }

    /// Explicit `dim × dim` projector `B·Bᵀ`.
    pub fn projector(&self) -> Matrix {
        &self.vectors * self.vectors.transpose()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "projection",
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

/// Orthogonal projection onto `span(b)`: `x·B·Bᵀ`.
pub fn project(x: &Vector, b: &SubspaceBasis) -> Result<Vector> {
    b.check_len(x.len())?;
    let coeffs = b.vectors.tr_mul(x);
    Ok(&b.vectors * coeffs)
}

/// `x − project(x, b)`.
pub fn project_complement(x: &Vector, b: &SubspaceBasis) -> Result<Vector> {
    Ok(x - project(x, b)?)
}

/// Fraction of `‖x‖²` lying in `span(b)`, in `[0, 1]`.
pub fn residual_energy(x: &Vector, b: &SubspaceBasis) -> Result<f64> {
    b.check_len(x.len())?;
    let total = x.norm_squared();
    if total == 0.0 {
        return Err(Error::ZeroVector);
    }
    let inside = b.vectors.tr_mul(x).norm_squared();
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Sines of the principal angles between two subspaces of equal dimension,
/// largest first. Computed from `(I − AAᵀ)B`, which keeps small angles
/// accurate.
pub fn principal_angle_sines(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "principal angles (ambient dimension)",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.k() != b.k() {
        return Err(Error::DimensionMismatch {
            context: "principal angles (subspace dimension)",
            expected: a.k(),
            found: b.k(),
        });
    }
    let residual = &b.vectors - &a.vectors * a.vectors.tr_mul(&b.vectors);
    let f = svd(&residual)?;
    Ok(f.sigma.iter().map(|s| s.clamp(0.0, 1.0)).collect())
}

/// Principal angles in radians, largest first.
pub fn principal_angles(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<Vec<f64>> {
    Ok(principal_angle_sines(a, b)?
        .into_iter()
        .map(f64::asin)
        .collect())
}

/// Sine of the largest principal angle, `‖sin Θ(A, B)‖₂`.
pub fn sin_theta(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<f64> {
    Ok(principal_angle_sines(a, b)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let f = svd(&Matrix::identity(3, 3)).unwrap();
        for s in f.sigma().iter() {
            assert!((s - 1.0).abs() < 1e-14);
        }
        let b = basis(&f, 3).unwrap();
        // sign convention makes every column a non-negative standard unit vector
        for j in 0..3 {
            let col = b.column(j);
            assert!((col.amax() - 1.0).abs() < 1e-14);
            assert!(col.iter().all(|&x| x >= 0.0));
        }
        let p = b.projector();
        assert!((p - Matrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = Vector::from_vec(vec![2.0, 0.0, 0.0, 0.0]);
        let v = Vector::from_vec(vec![0.0, 3.0, 0.0]);
        let m = &u * v.transpose();
        let f = svd(&m).unwrap();
        assert!((f.sigma()[0] - 6.0).abs() < 1e-12);
        assert!(f.sigma()[1].abs() < 1e-12);
        assert!(f.sigma()[2].abs() < 1e-12);
        let b = basis(&f, 1).unwrap();
        let expected = &v / v.norm();
        assert!((b.column(0) - expected).norm() < 1e-12);
        let rec = truncate_reconstruct(&f, 1).unwrap();
        assert!((rec - m).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::NonFiniteInput)));
        m[(0, 1)] = f64::INFINITY;
        assert!(matches!(svd(&m), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn rank_bounds_are_checked() {
        let f = svd(&oracle::gaussian_matrix(&mut rng(1), 5, 3)).unwrap();
        assert!(matches!(
            truncate_reconstruct(&f, 0),
            Err(Error::RankOutOfBounds { k: 0, max: 3 })
        ));
        assert!(matches!(basis(&f, 4), Err(Error::RankOutOfBounds { .. })));
    }

    #[test]
    fn factors_satisfy_invariants_for_wide_tall_and_square() {
        let mut r = rng(11);
        for (rows, cols) in [(20, 8), (8, 20), (13, 13), (70, 5), (1, 6), (6, 1)] {
            let m = oracle::gaussian_matrix(&mut r, rows, cols);
            let f = svd(&m).unwrap();
            assert_eq!(f.rank_bound(), rows.min(cols));
            assert!(orthonormality_deviation(f.u()) <= 1e-10);
            assert!(orthonormality_deviation(f.v()) <= 1e-10);
            assert!((f.reconstruct() - &m).norm() <= 1e-8 * m.norm());
            for w in f.sigma().as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
            for j in 0..f.rank_bound() {
                let col = f.v().column(j);
                let imax = col.iamax();
                assert!(col[imax] >= 0.0);
            }
        }
    }

    #[test]
    fn singular_values_match_gram_eigen_oracle() {
        let m = oracle::gaussian_matrix(&mut rng(7), 20, 8);
        let f = svd(&m).unwrap();
        let expected = oracle::singular_values_via_gram(&m);
        for (s, e) in f.sigma().iter().zip(&expected) {
            assert!((s - e).abs() <= 1e-8 * e, "{s} vs {e}");
        }
    }

    #[test]
    fn truncation_error_matches_tail_energy() {
        let m = oracle::gaussian_matrix(&mut rng(3), 10, 6);
        let f = svd(&m).unwrap();
        let sig = oracle::singular_values_via_gram(&m);
        let tail: f64 = sig[2..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let err = (truncate_reconstruct(&f, 2).unwrap() - &m).norm();
        assert!((err - tail).abs() <= 1e-8 * tail);
        let full = truncate_reconstruct(&f, 6).unwrap();
        assert!((full - &m).norm() <= 1e-8 * m.norm());
    }

    #[test]
    fn basis_matches_top_eigenvectors_of_gram() {
        let m = oracle::gaussian_matrix(&mut rng(7), 20, 8);
        let f = svd(&m).unwrap();
        let b = basis(&f, 3).unwrap();
        let (_, vecs) = oracle::jacobi_eigen(&(m.transpose() * &m));
        let top = SubspaceBasis::new(vecs.columns(0, 3).into_owned()).unwrap();
        for angle in principal_angles(&b, &top).unwrap() {
            assert!(angle <= 1e-6, "angle {angle}");
        }
    }

    #[test]
    fn projection_edge_cases() {
        let mut r = rng(5);
        let b = SubspaceBasis::from_span(&oracle::gaussian_matrix(&mut r, 16, 4)).unwrap();
        let inside = b.vectors() * oracle::gaussian_vector(&mut r, 4);
        assert!((project(&inside, &b).unwrap() - &inside).norm() <= 1e-10 * inside.norm());
        assert!(project_complement(&inside, &b).unwrap().norm() <= 1e-10 * inside.norm());

        let outside = oracle::explicit_complement(&b, &oracle::gaussian_vector(&mut r, 16));
        assert!(project(&outside, &b).unwrap().norm() <= 1e-10 * outside.norm());
        assert!(
            (project_complement(&outside, &b).unwrap() - &outside).norm() <= 1e-10 * outside.norm()
        );

        let x = oracle::gaussian_vector(&mut r, 16);
        let explicit = b.projector() * &x;
        assert!((project(&x, &b).unwrap() - explicit).norm() <= 1e-12 * x.norm().max(1.0));

        let p = project(&x, &b).unwrap();
        let c = project_complement(&x, &b).unwrap();
        let lhs = x.norm_squared();
        assert!((lhs - p.norm_squared() - c.norm_squared()).abs() <= 1e-10 * lhs);
        assert!((&p + &c - &x).amax() <= 1e-12 * x.amax().max(1.0));
        for j in 0..b.k() {
            assert!(c.dot(&b.column(j)).abs() <= 1e-10 * x.norm());
        }
    }

    #[test]
    fn projection_checks_dimension() {
        let b = SubspaceBasis::new(Matrix::identity(4, 2)).unwrap();
        let x = Vector::zeros(3);
        assert!(matches!(
            project(&x, &b),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 3,
                ..
            })
        ));
        assert!(project_complement(&x, &b).is_err());
        assert!(residual_energy(&x, &b).is_err());
    }

    #[test]
    fn residual_energy_cases() {
        let mut r = rng(9);
        let b = SubspaceBasis::from_span(&oracle::gaussian_matrix(&mut r, 12, 3)).unwrap();
        let b1 = b.column(0);
        assert!((residual_energy(&b1, &b).unwrap() - 1.0).abs() < 1e-12);

        let w = oracle::explicit_complement(&b, &oracle::gaussian_vector(&mut r, 12));
        let w = &w / w.norm();
        assert!(residual_energy(&w, &b).unwrap() < 1e-12);

        let half = (&b1 + &w) / 2f64.sqrt();
        assert!((residual_energy(&half, &b).unwrap() - 0.5).abs() <= 1e-10);

        assert!(matches!(
            residual_energy(&Vector::zeros(12), &b),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn basis_constructor_rejects_non_orthonormal() {
        let mut m = Matrix::identity(4, 2);
        m[(0, 1)] = 0.1;
        assert!(matches!(
            SubspaceBasis::new(m),
            Err(Error::NotOrthonormal { .. })
        ));
        assert!(SubspaceBasis::new(Matrix::identity(2, 3)).is_err());
    }

    #[test]
    fn svd_is_bit_deterministic() {
        let m = oracle::gaussian_matrix(&mut rng(21), 30, 12);
        assert_eq!(svd(&m).unwrap(), svd(&m).unwrap());
    }

    #[test]
    fn principal_angles_of_rotated_plane() {
        let a = SubspaceBasis::new(Matrix::identity(3, 1)).unwrap();
        let theta: f64 = 0.3;
        let b = SubspaceBasis::new(Matrix::from_column_slice(
            3,
            1,
            &[theta.cos(), theta.sin(), 0.0],
        ))
        .unwrap();
        let angles = principal_angles(&a, &b).unwrap();
        assert!((angles[0] - theta).abs() < 1e-12);
    }
}
