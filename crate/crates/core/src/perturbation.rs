//! Stability of the top-k right singular subspace when one row is appended.
//!
//! For `A' = [A; a]` the Gram perturbation is `Δ = A'ᵀA' − AᵀA = aᵀa`, so
//! `‖Δ‖ = ‖a‖²`. The reported bound is `‖a‖² / (σ_k − σ_{k+1})`; the
//! eigenvalue gap `σ_k² − σ_{k+1}²` of `AᵀA` is stored next to it so the
//! Gram-form bound can be checked as well.

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SubspaceBasis, Vector};
use crate::oracle;

/// Gaps at or below `1e-12·σ_1` make the bound infinite.
pub const GAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DavisKahan {
    pub delta_norm: f64,
    pub gap_singular: f64,
    pub gap_eigen: f64,
    /// `delta_norm / gap_singular`, or `+∞` when the gap vanishes.
    pub bound: f64,
}

impl DavisKahan {
    pub fn is_degenerate(&self) -> bool {
        self.bound.is_infinite()
    }

    /// `delta_norm / gap_eigen`, `+∞` when degenerate.
    pub fn eigen_bound(&self) -> f64 {
        if self.is_degenerate() || self.gap_eigen <= 0.0 {
            f64::INFINITY
        } else {
            self.delta_norm / self.gap_eigen
        }
    }
}

fn serialize_bound<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("+inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub delta_norm: f64,
    pub gap_singular: f64,
    pub gap_eigen: f64,
    #[serde(serialize_with = "serialize_bound")]
    pub bound: f64,
    pub angles_deg: Vec<f64>,
    pub mean_angle_deg: f64,
    pub sin_theta: f64,
}

impl PerturbationReport {
    pub fn bound_holds(&self) -> bool {
        self.sin_theta <= self.bound
    }

    pub fn eigen_bound(&self) -> f64 {
        DavisKahan {
            delta_norm: self.delta_norm,
            gap_singular: self.gap_singular,
            gap_eigen: self.gap_eigen,
            bound: self.bound,
        }
        .eigen_bound()
    }
}

/// Factorization of `A` reused across many appended rows.
///
/// Since `A = U·Σ·Vᵀ` with orthonormal `U`, the stacked `[A; a]` shares its
/// singular values and right singular vectors with the small matrix
/// `[Σ·Vᵀ; a]`.
#[derive(Debug, Clone)]
pub struct PerturbationContext {
    k: usize,
    sigma: Vector,
    basis: SubspaceBasis,
    row_factor: Matrix,
}

impl PerturbationContext {
    pub fn new(a: &Matrix, k: usize) -> Result<Self> {
        let max = a.nrows().min(a.ncols()).saturating_sub(1);
        if k == 0 || k > max {
            return Err(Error::RankOutOfBounds { k, max });
        }
        let f = linalg::svd(a)?;
        let basis = linalg::basis(&f, k)?;
        let mut row_factor = f.v().transpose();
        for (i, mut row) in row_factor.row_iter_mut().enumerate() {
            row *= f.sigma()[i];
        }
        Ok(Self {
            k,
            sigma: f.sigma().clone(),
            basis,
            row_factor,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.row_factor.ncols()
    }

    pub fn sigma(&self) -> &Vector {
        &self.sigma
    }

    pub fn basis(&self) -> &SubspaceBasis {
        &self.basis
    }

    fn check_row(&self, a_new: &Vector) -> Result<()> {
        if a_new.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "appended row",
                expected: self.dim(),
                found: a_new.len(),
            });
        }
        if a_new.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    pub fn davis_kahan(&self, a_new: &Vector) -> Result<DavisKahan> {
        self.check_row(a_new)?;
        let (sk, sk1) = (self.sigma[self.k - 1], self.sigma[self.k]);
        let delta_norm = a_new.norm_squared();
        let gap_singular = sk - sk1;
        let gap_eigen = sk * sk - sk1 * sk1;
        let bound = if gap_singular <= GAP_TOL * self.sigma[0] {
            f64::INFINITY
        } else {
            delta_norm / gap_singular
        };
        Ok(DavisKahan {
            delta_norm,
            gap_singular,
            gap_eigen,
            bound,
        })
    }

    /// Top-k right singular basis of `[A; a_new]`.
    pub fn augmented_basis(&self, a_new: &Vector) -> Result<SubspaceBasis> {
        self.check_row(a_new)?;
        if a_new.iter().all(|&x| x == 0.0) {
            // a zero row leaves AᵀA unchanged
            return Ok(self.basis.clone());
        }
        let mut stacked = Matrix::zeros(self.row_factor.nrows() + 1, self.dim());
        stacked
            .rows_mut(0, self.row_factor.nrows())
            .copy_from(&self.row_factor);
        stacked
            .row_mut(self.row_factor.nrows())
            .copy_from(&a_new.transpose());
        let f = linalg::svd(&stacked)?;
        linalg::basis(&f, self.k)
    }

    /// Per-index angles in degrees between `v_i` and `v'_i`.
    pub fn empirical_angles(&self, a_new: &Vector) -> Result<Vec<f64>> {
        let after = self.augmented_basis(a_new)?;
        Ok(paired_angles_deg(&self.basis, &after))
    }

    pub fn report(&self, a_new: &Vector) -> Result<PerturbationReport> {
        let dk = self.davis_kahan(a_new)?;
        let after = self.augmented_basis(a_new)?;
        let angles_deg = paired_angles_deg(&self.basis, &after);
        let mean_angle_deg = angles_deg.iter().sum::<f64>() / angles_deg.len() as f64;
        let sin_theta = linalg::sin_theta(&self.basis, &after)?;
        Ok(PerturbationReport {
            delta_norm: dk.delta_norm,
            gap_singular: dk.gap_singular,
            gap_eigen: dk.gap_eigen,
            bound: dk.bound,
            angles_deg,
            mean_angle_deg,
            sin_theta,
        })
    }
}

/// `θ_i = arccos(|⟨v_i, v'_i⟩|)` for unit vectors, evaluated as
/// `atan2(‖v'_i − ⟨v_i, v'_i⟩v_i‖, |⟨v_i, v'_i⟩|)` to stay accurate near 0.
fn paired_angles_deg(before: &SubspaceBasis, after: &SubspaceBasis) -> Vec<f64> {
    (0..before.k())
        .map(|i| {
            let v = before.vectors().column(i);
            let w = after.vectors().column(i);
            let c = v.dot(&w);
            let s = (w - v * c).norm();
            s.atan2(c.abs()).to_degrees()
        })
        .collect()
}

pub fn davis_kahan_bound(a: &Matrix, a_new: &Vector, k: usize) -> Result<DavisKahan> {
    PerturbationContext::new(a, k)?.davis_kahan(a_new)
}

pub fn empirical_angles(a: &Matrix, a_new: &Vector, k: usize) -> Result<Vec<f64>> {
    PerturbationContext::new(a, k)?.empirical_angles(a_new)
}

pub fn verify_bound(a: &Matrix, a_new: &Vector, k: usize) -> Result<PerturbationReport> {
    PerturbationContext::new(a, k)?.report(a_new)
}

/// Reports for a zero-row control plus `trials` random unit rows.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub k: usize,
    pub trials: usize,
    pub mean_angle_deg: f64,
    pub max_angle_deg: f64,
    pub max_sin_theta: f64,
    /// Trials where `sin_theta` exceeds the singular-gap bound.
    pub violations: usize,
    /// Trials where `sin_theta` exceeds the eigenvalue-gap bound.
    pub violations_eigen: usize,
    pub control: PerturbationReport,
    pub reports: Vec<PerturbationReport>,
}

pub fn run_trials<R: Rng + ?Sized>(
    ctx: &PerturbationContext,
    trials: usize,
    rng: &mut R,
) -> Result<TrialSummary> {
    let control = ctx.report(&Vector::zeros(ctx.dim()))?;
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut row = oracle::gaussian_vector(rng, ctx.dim());
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
        reports.push(ctx.report(&row)?);
    }
    let n = reports.len().max(1) as f64;
    let mean_angle_deg = reports.iter().map(|r| r.mean_angle_deg).sum::<f64>() / n;
    let max_angle_deg = reports
        .iter()
        .flat_map(|r| r.angles_deg.iter().copied())
        .fold(0.0, f64::max);
    let max_sin_theta = reports.iter().map(|r| r.sin_theta).fold(0.0, f64::max);
    let violations = reports.iter().filter(|r| !r.bound_holds()).count();
    let violations_eigen = reports
        .iter()
        .filter(|r| r.sin_theta > r.eigen_bound())
        .count();
    Ok(TrialSummary {
        k: ctx.k(),
        trials,
        mean_angle_deg,
        max_angle_deg,
        max_sin_theta,
        violations,
        violations_eigen,
        control,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn diag_3_1() -> Matrix {
        let mut rng = synthetic::rng(1);
        synthetic::planted_spectrum(&mut rng, 4, 2, &[3.0, 1.0])
    }

    #[test]
    fn zero_row_gives_zero_everything() {
        let a = diag_3_1();
        let dk = davis_kahan_bound(&a, &Vector::zeros(2), 1).unwrap();
        assert_eq!(dk.delta_norm, 0.0);
        assert_eq!(dk.bound, 0.0);
        let r = verify_bound(&a, &Vector::zeros(2), 1).unwrap();
        assert!(r.angles_deg.iter().all(|t| t.abs() < 1e-8));
        assert!(r.sin_theta < 1e-14);
        assert!(r.bound_holds());
    }

    #[test]
    fn known_spectrum_gap_and_bound() {
        let a = diag_3_1();
        let dk = davis_kahan_bound(&a, &Vector::from_vec(vec![0.6, 0.8]), 1).unwrap();
        assert!((dk.gap_singular - 2.0).abs() < 1e-12);
        assert!((dk.gap_eigen - 8.0).abs() < 1e-12);
        assert!((dk.delta_norm - 1.0).abs() < 1e-12);
        assert!((dk.bound - 0.5).abs() < 1e-12);
        assert!((dk.eigen_bound() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn equal_singular_values_give_infinite_bound() {
        let a = Matrix::identity(4, 3);
        let r = verify_bound(&a, &Vector::from_vec(vec![1.0, 0.0, 0.0]), 1).unwrap();
        assert!(r.bound.is_infinite());
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["bound"], "+inf");
    }

    #[test]
    fn json_has_exact_fields() {
        let r = verify_bound(&diag_3_1(), &Vector::from_vec(vec![0.1, 0.2]), 1).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "angles_deg",
                "bound",
                "delta_norm",
                "gap_eigen",
                "gap_singular",
                "mean_angle_deg",
                "sin_theta"
            ]
        );
    }

    #[test]
    fn scaling_row_scales_delta_quadratically() {
        let a = diag_3_1();
        let row = Vector::from_vec(vec![0.3, -0.4]);
        let base = davis_kahan_bound(&a, &row, 1).unwrap().delta_norm;
        for s in [0.0, 0.5, 2.0, 10.0] {
            let d = davis_kahan_bound(&a, &(&row * s), 1).unwrap().delta_norm;
            assert!((d - s * s * base).abs() <= 1e-14 * (1.0 + d));
        }
    }

    #[test]
    fn row_from_rank_k_row_space_keeps_span() {
        let mut rng = synthetic::rng(8);
        let a = synthetic::planted_spectrum(&mut rng, 30, 10, &[9.0, 7.0, 5.0]);
        let row = a.row(3).transpose() * 1.7;
        let r = verify_bound(&a, &row, 3).unwrap();
        assert!(r.sin_theta <= 1e-8);
    }

    #[test]
    fn invalid_rank_and_dims() {
        let a = diag_3_1();
        assert!(matches!(
            davis_kahan_bound(&a, &Vector::zeros(2), 2),
            Err(Error::RankOutOfBounds { k: 2, max: 1 })
        ));
        assert!(matches!(
            davis_kahan_bound(&a, &Vector::zeros(2), 0),
            Err(Error::RankOutOfBounds { .. })
        ));
        assert!(matches!(
            empirical_angles(&a, &Vector::zeros(3), 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trial_summary_counts() {
        let mut rng = synthetic::rng(12);
        let spectrum = synthetic::dominant_spectrum(3, 40.0, 0.8, 5, 1.0);
        let a = synthetic::planted_spectrum(&mut rng, 60, 12, &spectrum);
        let ctx = PerturbationContext::new(&a, 3).unwrap();
        let summary = run_trials(&ctx, 10, &mut rng).unwrap();
        assert_eq!(summary.reports.len(), 10);
        assert_eq!(summary.violations, 0);
        assert!(summary.control.mean_angle_deg.abs() < 1e-10);
        assert!(summary.max_angle_deg >= summary.mean_angle_deg);
    }
}
