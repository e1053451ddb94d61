//! Built-in property suite behind `sse verify`.
//!
//! Each property runs a seeded batch of randomized checks against the oracle
//! routines and reports pass/fail with its worst observed value. Sizes are
//! kept small enough for the whole suite to finish in a few seconds.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::concept::{
    assemble_concept_matrix, build_semantic_subspace, SemanticSubspace, DEFAULT_SELECTION,
};
use crate::error::Result;
use crate::linalg::{self, Matrix, SubspaceBasis, Vector};
use crate::optimizer::{self, Denoiser, OptimizationConfig, ToyDenoiser};
use crate::suppression::{self, ConditionTokens, SuppressionConfig};
use crate::{io, oracle, perturbation, synthetic};

/// Signature of an orthogonal projector onto `span(b)`.
pub type Projector = fn(&Vector, &SubspaceBasis) -> Result<Vector>;

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.results.iter().map(|r| r.name.len()).max().unwrap_or(8);
        writeln!(
            f,
            "{:<width$}  {:<4}  {:>9}  detail",
            "property", "ok", "time"
        )?;
        for r in &self.results {
            writeln!(
                f,
                "{:<width$}  {:<4}  {:>7.1}ms  {}",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.elapsed.as_secs_f64() * 1e3,
                r.detail
            )?;
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        write!(f, "{} properties, {} failed", self.results.len(), failed)
    }
}

pub struct Suite {
    pub seed: u64,
    pub projector: Projector,
}

impl Default for Suite {
    fn default() -> Self {
        Self {
            seed: 42,
            projector: linalg::project,
        }
    }
}

type Check = fn(&Suite) -> std::result::Result<String, String>;

impl Suite {
    pub fn run(&self) -> VerifyReport {
        let checks: [(&'static str, Check); 12] = [
            ("svd_gram_oracle", svd_gram_oracle),
            ("eckart_young", eckart_young),
            ("projector_algebra", projector_algebra),
            ("semantic_subspace", semantic_subspace),
            ("suppression_exactness", suppression_exactness),
            ("rank_economy", rank_economy),
            ("gradient_orthogonality", gradient_orthogonality),
            ("gradient_finite_diff", gradient_finite_diff),
            ("subspace_freeze_descent", subspace_freeze_descent),
            ("davis_kahan", davis_kahan),
            ("format_round_trip", format_round_trip),
            ("determinism", determinism),
        ];
        let results = checks
            .into_iter()
            .map(|(name, check)| {
                let start = Instant::now();
                let outcome = check(self);
                let elapsed = start.elapsed();
                let (passed, detail) = match outcome {
                    Ok(d) => (true, d),
                    Err(d) => (false, d),
                };
                PropertyResult {
                    name,
                    passed,
                    detail,
                    elapsed,
                }
            })
            .collect();
        VerifyReport { results }
    }

    fn rng(&self, salt: u64) -> rand_chacha::ChaCha8Rng {
        synthetic::rng(
            self.seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(salt),
        )
    }
}

fn e<E: fmt::Display>(err: E) -> String {
    err.to_string()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture_subspace(
    rng: &mut impl Rng,
    n: usize,
    d: usize,
    k: usize,
) -> std::result::Result<SemanticSubspace, String> {
    let recs = synthetic::concept_tokens(rng, n, d, k, 0.1);
    let m = assemble_concept_matrix(&recs, &DEFAULT_SELECTION).map_err(e)?;
    build_semantic_subspace(&m, k).map_err(e)
}

fn svd_gram_oracle(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let (r, c) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let m = oracle::gaussian_matrix(&mut rng, r, c);
        let f = linalg::svd(&m).map_err(e)?;
        let expected = oracle::singular_values_via_gram(&m);
        for (got, want) in f.sigma().iter().zip(&expected) {
            worst = worst.max((got - want).abs() / want.max(f64::MIN_POSITIVE));
        }
        ensure(linalg::orthonormality_deviation(f.u()) <= 1e-10, || {
            "U not orthonormal".into()
        })?;
        ensure(linalg::orthonormality_deviation(f.v()) <= 1e-10, || {
            "V not orthonormal".into()
        })?;
        ensure((f.reconstruct() - &m).norm() <= 1e-8 * m.norm(), || {
            "reconstruction error".into()
        })?;
    }
    ensure(worst <= 1e-8, || format!("max rel err {worst:.2e} > 1e-8"))?;
    Ok(format!("60 matrices, max rel err {worst:.1e}"))
}

fn eckart_young(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(2);
    for _ in 0..200 {
        let (r, c) = (rng.random_range(2..=10), rng.random_range(2..=10));
        let k = rng.random_range(1..r.min(c));
        let m = oracle::gaussian_matrix(&mut rng, r, c);
        let f = linalg::svd(&m).map_err(e)?;
        let best = (linalg::truncate_reconstruct(&f, k).map_err(e)? - &m).norm();
        let tail: f64 = f.sigma().iter().skip(k).map(|x| x * x).sum::<f64>().sqrt();
        ensure((best - tail).abs() <= 1e-8 * tail.max(1e-300), || {
            "error != tail energy".into()
        })?;
        let competitor =
            oracle::gaussian_matrix(&mut rng, r, k) * oracle::gaussian_matrix(&mut rng, k, c);
        ensure((competitor - &m).norm() >= best, || {
            "random rank-k matrix beat truncation".into()
        })?;
    }
    Ok("200 matrices".into())
}

fn projector_algebra(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..=64);
        let k = rng.random_range(1..=8.min(d));
        let b = SubspaceBasis::from_span(&oracle::gaussian_matrix(&mut rng, d, k)).map_err(e)?;
        let mut p = Matrix::zeros(d, d);
        for j in 0..d {
            let mut ej = Vector::zeros(d);
            ej[j] = 1.0;
            p.set_column(j, &(s.projector)(&ej, &b).map_err(e)?);
        }
        let idem = (&p * &p - &p).norm();
        let sym = (&p - p.transpose()).norm();
        let trace_err = (p.trace() - k as f64).abs();
        let x = oracle::gaussian_vector(&mut rng, d);
        let px = (s.projector)(&x, &b).map_err(e)?;
        let pyth = ((x.norm_squared() - px.norm_squared() - (&x - &px).norm_squared())
            / x.norm_squared())
        .abs();
        worst = worst.max(idem).max(sym).max(pyth);
        ensure(
            idem <= 1e-10 && sym <= 1e-10 && pyth <= 1e-10 && trace_err <= 1e-8,
            || {
                format!("d={d} k={k}: |P²-P|={idem:.1e} |P-Pᵀ|={sym:.1e} tr err={trace_err:.1e} pyth={pyth:.1e}")
            },
        )?;
    }
    Ok(format!("200 cases, worst {worst:.1e}"))
}

fn semantic_subspace(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(4);
    let recs = synthetic::concept_tokens(&mut rng, 50, 16, 5, 0.2);
    let m = assemble_concept_matrix(&recs, &DEFAULT_SELECTION).map_err(e)?;
    let sub = build_semantic_subspace(&m, 5).map_err(e)?;
    let rhat = sub.reconstruct();
    let f = linalg::svd(&rhat).map_err(e)?;
    ensure(f.sigma()[5] <= 1e-10 * f.sigma()[0], || {
        "rank(R̂) > k".into()
    })?;
    for row in rhat.row_iter() {
        let energy = linalg::residual_energy(&row.transpose(), sub.basis()).map_err(e)?;
        ensure(energy >= 1.0 - 1e-10, || format!("row energy {energy}"))?;
    }
    let mut permuted = m.clone();
    let n = permuted.matrix.nrows();
    for i in 0..n / 2 {
        permuted.matrix.swap_rows(i, n - 1 - i);
    }
    let other = build_semantic_subspace(&permuted, 5).map_err(e)?;
    let angle = linalg::principal_angles(sub.basis(), other.basis()).map_err(e)?[0];
    ensure(angle <= 1e-8, || {
        format!("row order changed span by {angle:.1e}")
    })?;
    Ok("rank, row containment, order invariance".into())
}

fn suppression_exactness(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(5);
    let sub = fixture_subspace(&mut rng, 200, 32, 5)?;
    let (mut own, mut energy): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let x = oracle::gaussian_vector(&mut rng, 32);
        let y = suppression::suppress_token(&x, &sub).map_err(e)?;
        let aug = suppression::augmented_matrix(&x, &sub).map_err(e)?;
        let f = linalg::svd(&aug.matrix).map_err(e)?;
        own = own.max((f.v().columns(0, 5).transpose() * &y).norm() / x.norm());
        energy = energy.max(linalg::residual_energy(&y, sub.basis()).map_err(e)?);
    }
    ensure(own <= 1e-8, || format!("own top-k component {own:.1e}"))?;
    ensure(energy <= 0.05, || format!("residual energy {energy:.3}"))?;
    Ok(format!(
        "100 tokens, own-span {own:.1e}, energy {energy:.4}"
    ))
}

fn rank_economy(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(6);
    let sub = fixture_subspace(&mut rng, 60, 16, 4)?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = oracle::gaussian_vector(&mut rng, 16);
        let aug = suppression::augmented_matrix(&x, &sub).map_err(e)?;
        let f = linalg::svd(&aug.matrix).map_err(e)?;
        ensure(f.sigma()[5] <= 1e-9 * f.sigma()[0], || {
            "augmented rank > k+1".into()
        })?;
        let fast = suppression::suppress_token(&x, &sub).map_err(e)?;
        let naive = suppression::suppress_token_naive(&x, &sub).map_err(e)?;
        worst = worst.max((fast - naive).norm() / x.norm());
    }
    ensure(worst <= 1e-8, || format!("fast vs naive {worst:.1e}"))?;
    Ok(format!("50 tokens, fast vs naive {worst:.1e}"))
}

fn gradient_orthogonality(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(4..=32);
        let k = rng.random_range(1..=4);
        let b = SubspaceBasis::from_span(&oracle::gaussian_matrix(&mut rng, d, k)).map_err(e)?;
        let g = oracle::gaussian_matrix(&mut rng, 6, d);
        let p = optimizer::project_gradient(&g, &b).map_err(e)?;
        for (row, orig) in p.row_iter().zip(g.row_iter()) {
            let dots = b.vectors().tr_mul(&row.transpose());
            worst = worst.max(dots.amax() / orig.norm());
        }
    }
    ensure(worst <= 1e-10, || {
        format!("max |⟨row, B_j⟩| / |row| = {worst:.1e}")
    })?;
    Ok(format!("100 gradients, worst {worst:.1e}"))
}

fn gradient_finite_diff(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(8);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let den = ToyDenoiser::new(s.seed + i, 3, 8, 10, 5);
        let t = rng.random_range(0..=5);
        let x = oracle::gaussian_vector(&mut rng, 10);
        let c = oracle::gaussian_matrix(&mut rng, 3, 8);
        let target = oracle::gaussian_vector(&mut rng, 10);
        let g = den.half_sq_gradient(&x, t, &c, &target).map_err(e)?;
        let fd = optimizer::finite_diff_gradient(&den, &x, t, &c, &target).map_err(e)?;
        worst = worst.max((&g - &fd).norm() / g.norm());
    }
    ensure(worst <= 1e-5, || format!("rel err {worst:.1e}"))?;
    Ok(format!("10 configs, rel err {worst:.1e}"))
}

fn small_run(seed: u64) -> std::result::Result<optimizer::OptimizationTrace, String> {
    let mut rng = synthetic::rng(seed);
    let sub = fixture_subspace(&mut rng, 40, 16, 3)?;
    let c = ConditionTokens::from_matrix(oracle::gaussian_matrix(&mut rng, 4, 16)).map_err(e)?;
    let sup = suppression::suppress_condition(&c, &sub, &SuppressionConfig::for_subspace(&sub))
        .map_err(e)?;
    let den = ToyDenoiser::new(seed, 4, 16, 8, 50);
    let x0 = oracle::gaussian_vector(&mut rng, 8);
    let (_, trace) =
        optimizer::run_optimization(&c, &sup, &sub, &den, &OptimizationConfig::default(), &x0)
            .map_err(e)?;
    Ok(trace)
}

fn subspace_freeze_descent(s: &Suite) -> std::result::Result<String, String> {
    let trace = small_run(s.seed)?;
    let drift = trace.max_relative_drift();
    ensure(drift <= 1e-8, || format!("drift {drift:.1e}"))?;
    ensure(trace.loss_non_increasing(), || "loss increased".into())?;
    Ok(format!("{} steps, drift {drift:.1e}", trace.steps.len()))
}

fn davis_kahan(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(9);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..50 {
        let (n, d) = (rng.random_range(20..=60), rng.random_range(8..=16));
        let k = rng.random_range(1..=4);
        let spectrum = synthetic::dominant_spectrum(k, 30.0, 0.85, d - k, 1.0);
        let a = synthetic::planted_spectrum(&mut rng, n, d, &spectrum);
        let mut row = oracle::gaussian_vector(&mut rng, d);
        row /= row.norm();
        let r = perturbation::verify_bound(&a, &row, k).map_err(e)?;
        ensure(r.bound_holds(), || {
            format!("sinθ {} > bound {}", r.sin_theta, r.bound)
        })?;
        worst_ratio = worst_ratio.max(r.sin_theta / r.bound);
    }
    Ok(format!("50 trials, max sinθ/bound {worst_ratio:.2}"))
}

fn format_round_trip(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(10);
    for _ in 0..20 {
        let (r, c) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let m = oracle::gaussian_matrix(&mut rng, r, c).map(|x| x as f32 as f64);
        let mut bytes = Vec::new();
        io::encode_embeddings(&mut bytes, &m).map_err(e)?;
        let back = io::decode_embeddings(&bytes).map_err(e)?;
        ensure(back == m, || "embedding round trip differs".into())?;
        for i in 0..8 {
            let mut bad = bytes.clone();
            bad[i] ^= 1 << rng.random_range(0..8);
            ensure(io::decode_embeddings(&bad).is_err(), || {
                format!("header byte {i} mutation accepted")
            })?;
        }
    }
    let sub = fixture_subspace(&mut rng, 30, 12, 3)?;
    let mut bytes = Vec::new();
    io::encode_subspace(&mut bytes, &sub).map_err(e)?;
    let back = io::decode_subspace(&bytes).map_err(e)?;
    let mut again = Vec::new();
    io::encode_subspace(&mut again, &back).map_err(e)?;
    ensure(again == bytes, || "subspace round trip differs".into())?;
    Ok("20 embedding shapes + subspace bundle".into())
}

fn determinism(s: &Suite) -> std::result::Result<String, String> {
    let mut rng = s.rng(11);
    let m = oracle::gaussian_matrix(&mut rng, 25, 10);
    ensure(
        linalg::svd(&m).map_err(e)? == linalg::svd(&m).map_err(e)?,
        || "svd differs between runs".into(),
    )?;
    let a = small_run(s.seed)?;
    let b = small_run(s.seed)?;
    ensure(a == b, || "optimization trace differs between runs".into())?;
    Ok("svd + optimization trace".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn broken(x: &Vector, b: &SubspaceBasis) -> Result<Vector> {
        Ok(linalg::project(x, b)? * 1.01)
    }

    #[test]
    fn pristine_suite_passes() {
        let report = Suite::default().run();
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.results.len(), 12);
    }

    #[test]
    fn broken_projector_is_caught() {
        let report = Suite {
            projector: broken,
            ..Suite::default()
        }
        .run();
        assert!(!report.all_passed());
        let failed: Vec<_> = report
            .results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name)
            .collect();
        assert_eq!(failed, vec!["projector_algebra"]);
    }
}
