//! Gradient-orthogonal token optimization.
//!
//! Suppressed tokens are pulled toward the denoiser output produced by the
//! original condition, with every update confined to the orthogonal
//! complement of the concept subspace. The denoiser is pluggable; a seeded
//! linear [`ToyDenoiser`] stands in for a diffusion UNet.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::concept::SemanticSubspace;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SubspaceBasis, Vector};
use crate::suppression::{ConditionTokens, SuppressedCondition};

/// Predicts noise `ε(x, t, c)` from a latent state, a step index and a
/// condition matrix, and differentiates the squared error w.r.t. `c`.
pub trait Denoiser {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// Largest valid step index; also the step count used by the sampler.
    fn max_step(&self) -> usize;

    fn predict(&self, x: &Vector, t: usize, c: &Matrix) -> Result<Vector>;

    /// Gradient w.r.t. `c` of `½‖ε(x, t, c) − target‖²`.
    fn half_sq_gradient(&self, x: &Vector, t: usize, c: &Matrix, target: &Vector)
        -> Result<Matrix>;
}

/// Affine map of one sampling step: `ε = A·x + B·vec(c) + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyStep {
    pub state: Matrix,
    pub condition: Matrix,
    pub offset: Vector,
}

/// Linear stand-in for a denoiser. `vec(c)` flattens the condition row-major.
///
/// Entries are standard normal samples scaled by `1/√(input dim)`, drawn
/// from a ChaCha8 stream selected by `(seed, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub seed: u64,
    n_tokens: usize,
    d_c: usize,
    state_dim: usize,
    steps: Vec<ToyStep>,
}

impl ToyDenoiser {
    pub fn new(seed: u64, n_tokens: usize, d_c: usize, state_dim: usize, t_max: usize) -> Self {
        let cond_dim = n_tokens * d_c;
        let steps = (0..=t_max)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let mut draw = |rows: usize, cols: usize| {
                    let scale = 1.0 / (cols as f64).sqrt();
                    DMatrix::from_fn(rows, cols, |_, _| {
                        scale * rng.sample::<f64, _>(StandardNormal)
                    })
                };
                ToyStep {
                    state: draw(state_dim, state_dim),
                    condition: draw(state_dim, cond_dim),
                    offset: draw(state_dim, 1).column(0).into_owned(),
                }
            })
            .collect();
        Self {
            seed,
            n_tokens,
            d_c,
            state_dim,
            steps,
        }
    }

    /// Builds a denoiser from explicit per-step maps (`steps[t]` for t = 0..=T).
    pub fn from_steps(n_tokens: usize, d_c: usize, steps: Vec<ToyStep>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::InvalidConfig(
                "toy denoiser needs at least one step".into(),
            ));
        };
        let state_dim = first.state.nrows();
        for s in &steps {
            if s.state.shape() != (state_dim, state_dim)
                || s.condition.shape() != (state_dim, n_tokens * d_c)
                || s.offset.len() != state_dim
            {
                return Err(Error::ShapeMismatch(
                    "inconsistent toy denoiser step".into(),
                ));
            }
        }
        Ok(Self {
            seed: 0,
            n_tokens,
            d_c,
            state_dim,
            steps,
        })
    }

    pub fn condition_shape(&self) -> (usize, usize) {
        (self.n_tokens, self.d_c)
    }

    pub fn step(&self, t: usize) -> Result<&ToyStep> {
        self.steps.get(t).ok_or_else(|| {
            Error::InvalidConfig(format!("step {t} exceeds T_max = {}", self.max_step()))
        })
    }

    /// Largest eigenvalue of `BᵀB` over the steps in `range`: the curvature
    /// of the per-step loss `‖B·vec(c) + r‖²` is twice this.
    pub fn max_curvature(&self, range: std::ops::Range<usize>) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in range {
            let s = linalg::svd(&self.step(t)?.condition)?;
            worst = worst.max(s.sigma()[0].powi(2));
        }
        Ok(worst)
    }

    /// Largest plain-GD learning rate for which every per-step loss is
    /// guaranteed not to increase.
    pub fn stable_learning_rate(&self, range: std::ops::Range<usize>) -> Result<f64> {
        Ok(1.0 / self.max_curvature(range)?)
    }

    fn check_inputs(&self, x: &Vector, c: &Matrix) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "denoiser state",
                expected: self.state_dim,
                found: x.len(),
            });
        }
        if c.shape() != (self.n_tokens, self.d_c) {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects a {}x{} condition, got {}x{}",
                self.n_tokens,
                self.d_c,
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(())
    }
}

fn flatten_rows(c: &Matrix) -> Vector {
    DVector::from_iterator(
        c.len(),
        c.row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    )
}

fn unflatten_rows(v: &Vector, rows: usize, cols: usize) -> Matrix {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

impl Denoiser for ToyDenoiser {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn noise_dim(&self) -> usize {
        self.state_dim
    }

    fn max_step(&self) -> usize {
        self.steps.len() - 1
    }

    fn predict(&self, x: &Vector, t: usize, c: &Matrix) -> Result<Vector> {
        self.check_inputs(x, c)?;
        let s = self.step(t)?;
        Ok(&s.state * x + &s.condition * flatten_rows(c) + &s.offset)
    }

    fn half_sq_gradient(
        &self,
        x: &Vector,
        t: usize,
        c: &Matrix,
        target: &Vector,
    ) -> Result<Matrix> {
        let residual = self.predict(x, t, c)? - target;
        let g = self.step(t)?.condition.tr_mul(&residual);
        Ok(unflatten_rows(&g, self.n_tokens, self.d_c))
    }
}

/// Squared Euclidean distance between two noise predictions.
pub fn noise_guide_loss(eps_hat: &Vector, eps: &Vector) -> Result<f64> {
    if eps_hat.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            context: "noise vectors",
            expected: eps_hat.len(),
            found: eps.len(),
        });
    }
    Ok((eps_hat - eps).norm_squared())
}

/// Removes the component of every row of `g` lying in `span(b)`:
/// `g − g·B·Bᵀ`.
pub fn project_gradient(g: &Matrix, b: &SubspaceBasis) -> Result<Matrix> {
    if g.ncols() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "gradient vs basis",
            expected: b.dim(),
            found: g.ncols(),
        });
    }
    let coeffs = g * b.vectors();
    Ok(g - coeffs * b.vectors().transpose())
}

/// Euler stand-in for a sampler step: `x − ε / T`.
pub fn toy_sampler_step(x: &Vector, eps: &Vector, _t: usize, total_steps: usize) -> Result<Vector> {
    if x.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            context: "sampler state vs noise",
            expected: x.len(),
            found: eps.len(),
        });
    }
    if total_steps == 0 {
        return Err(Error::InvalidConfig("sampler needs T >= 1".into()));
    }
    Ok(x - eps / total_steps as f64)
}

/// Central-difference gradient of `½‖den(x, t, c) − target‖²` w.r.t. `c`.
pub fn finite_diff_gradient(
    den: &dyn Denoiser,
    x: &Vector,
    t: usize,
    c: &Matrix,
    target: &Vector,
) -> Result<Matrix> {
    let h = 1e-5 * c.amax().max(1.0);
    let half_loss =
        |c: &Matrix| -> Result<f64> { Ok(0.5 * (den.predict(x, t, c)? - target).norm_squared()) };
    let mut grad = Matrix::zeros(c.nrows(), c.ncols());
    let mut probe = c.clone();
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = half_loss(&probe)?;
            probe[(i, j)] = orig - h;
            let down = half_loss(&probe)?;
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerKind {
    PlainGd,
    /// Adam moments with decoupled weight decay.
    AdamLike {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::AdamLike {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::PlainGd => "plain_gd",
            OptimizerKind::AdamLike { .. } => "adam_like",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "plain_gd" => Some(OptimizerKind::PlainGd),
            "adam_like" => Some(Self::adam_default()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationConfig {
    pub t_start: usize,
    /// Exclusive: steps `t_start..t_end` are visited.
    pub t_end: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub updates_per_step: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            t_start: 30,
            t_end: 50,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::PlainGd,
            updates_per_step: 1,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.t_start > self.t_end {
            return Err(Error::InvalidConfig(format!(
                "t_start ({}) must not exceed t_end ({})",
                self.t_start, self.t_end
            )));
        }
        if self.t_end > t_max {
            return Err(Error::InvalidConfig(format!(
                "t_end ({}) exceeds T_max ({t_max})",
                self.t_end
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and > 0".into(),
            ));
        }
        if self.updates_per_step == 0 {
            return Err(Error::InvalidConfig("updates_per_step must be >= 1".into()));
        }
        if let OptimizerKind::AdamLike {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.optimizer
        {
            let unit = 0.0..1.0;
            if !unit.contains(&beta1)
                || !unit.contains(&beta2)
                || eps.is_nan()
                || eps <= 0.0
                || weight_decay < 0.0
            {
                return Err(Error::InvalidConfig("invalid adam_like parameters".into()));
            }
        }
        Ok(())
    }
}

/// Diagnostics for one sampling step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Largest `‖Δc·B‖_F` over the updates of this step.
    pub max_subspace_drift: f64,
    /// `‖c‖_F` before the step's first update.
    pub token_norm: f64,
    pub grad_norm: f64,
    /// `‖g·B‖_F` of the raw gradient, i.e. what the projection removed.
    pub grad_subspace_component_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationTrace {
    pub steps: Vec<StepRecord>,
    #[serde(skip)]
    pub final_tokens: Matrix,
}

impl OptimizationTrace {
    /// Largest per-step drift relative to the token scale at that step.
    pub fn max_relative_drift(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.max_subspace_drift / s.token_norm.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    pub fn loss_non_increasing(&self) -> bool {
        self.steps.iter().all(|s| s.loss_after <= s.loss_before)
    }
}

struct AdamState {
    m: Matrix,
    v: Matrix,
    count: i32,
}

fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Runs the per-step online optimization of the suppressed tokens.
///
/// At each step the original condition's prediction is a fixed target; the
/// gradient of the noise-guide loss w.r.t. the suppressed tokens is projected
/// off the concept subspace before the update (and again after adaptive
/// scaling for `adam_like`). The state advances with the suppressed-branch
/// prediction.
pub fn run_optimization(
    original: &ConditionTokens,
    suppressed: &SuppressedCondition,
    s: &SemanticSubspace,
    den: &dyn Denoiser,
    cfg: &OptimizationConfig,
    x_init: &Vector,
) -> Result<(Matrix, OptimizationTrace)> {
    cfg.validate(den.max_step())?;
    if original.tokens().shape() != suppressed.tokens.shape() {
        return Err(Error::ShapeMismatch(format!(
            "original condition is {:?} but suppressed is {:?}",
            original.tokens().shape(),
            suppressed.tokens.shape()
        )));
    }
    if original.d_c() != s.d_c() {
        return Err(Error::ShapeMismatch(format!(
            "condition width {} differs from subspace d_c {}",
            original.d_c(),
            s.d_c()
        )));
    }
    if x_init.len() != den.state_dim() || den.noise_dim() != den.state_dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial state has length {}, denoiser state/noise dims are {}/{}",
            x_init.len(),
            den.state_dim(),
            den.noise_dim()
        )));
    }

    crate::linalg::ensure_finite(&suppressed.tokens)?;
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let basis = s.basis();
    let eta = cfg.learning_rate;
    let mut c = suppressed.tokens.clone();
    let mut x = x_init.clone();
    let mut adam = AdamState {
        m: Matrix::zeros(c.nrows(), c.ncols()),
        v: Matrix::zeros(c.nrows(), c.ncols()),
        count: 0,
    };
    let mut steps = Vec::with_capacity(cfg.t_end - cfg.t_start);

    // Inputs were checked above, so any non-finite value met inside the
    // loop comes from the iteration itself.
    let diverged = |t: usize| {
        move |e: Error| match e {
            Error::NonFiniteInput => Error::NonFiniteGradient { step: t },
            other => other,
        }
    };
    for t in cfg.t_start..cfg.t_end {
        let target = den.predict(&x, t, original.tokens()).map_err(diverged(t))?;
        let eps = den.predict(&x, t, &c).map_err(diverged(t))?;
        let loss_before = noise_guide_loss(&target, &eps)?;
        let token_norm = c.norm();
        let mut record = StepRecord {
            t,
            loss_before,
            loss_after: loss_before,
            max_subspace_drift: 0.0,
            token_norm,
            grad_norm: 0.0,
            grad_subspace_component_norm: 0.0,
        };

        for inner in 0..cfg.updates_per_step {
            let grad = den
                .half_sq_gradient(&x, t, &c, &target)
                .map_err(diverged(t))?
                * 2.0;
            if !all_finite(&grad) {
                return Err(Error::NonFiniteGradient { step: t });
            }
            let in_subspace = (&grad * basis.vectors()).norm();
            let g_perp = project_gradient(&grad, basis)?;
            if inner == 0 {
                record.grad_norm = grad.norm();
                record.grad_subspace_component_norm = in_subspace;
            }

            let update = match cfg.optimizer {
                OptimizerKind::PlainGd => g_perp * eta,
                OptimizerKind::AdamLike {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    adam.count += 1;
                    adam.m = &adam.m * beta1 + &g_perp * (1.0 - beta1);
                    adam.v = &adam.v * beta2 + g_perp.component_mul(&g_perp) * (1.0 - beta2);
                    let m_hat = &adam.m / (1.0 - beta1.powi(adam.count));
                    let v_hat = &adam.v / (1.0 - beta2.powi(adam.count));
                    let scaled = m_hat.zip_map(&v_hat, |m, v| m / (v.sqrt() + eps));
                    let step = (scaled + &c * weight_decay) * eta;
                    // coordinate-wise scaling tilts the step back toward the subspace
                    project_gradient(&step, basis)?
                }
            };
            let next = &c - &update;
            // tokens are stored as f32, so leaving that range counts as divergence
            if !next.iter().all(|v| v.abs() <= f32::MAX as f64) {
                return Err(Error::NonFiniteGradient { step: t });
            }
            let drift = ((&next - &c) * basis.vectors()).norm();
            record.max_subspace_drift = record.max_subspace_drift.max(drift);
            c = next;
        }

        record.loss_after =
            noise_guide_loss(&target, &den.predict(&x, t, &c).map_err(diverged(t))?)?;
        x = toy_sampler_step(&x, &eps, t, den.max_step())?;
        if !(record.loss_after.is_finite() && x.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteGradient { step: t });
        }
        steps.push(record);
    }

    let trace = OptimizationTrace {
        steps,
        final_tokens: c.clone(),
    };
    Ok((c, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::{assemble_concept_matrix, build_semantic_subspace, DEFAULT_SELECTION};
    use crate::suppression::{suppress_condition, SuppressionConfig};
    use crate::{oracle, synthetic};

    fn setup(
        seed: u64,
        n_tokens: usize,
        d_c: usize,
        k: usize,
    ) -> (SemanticSubspace, ConditionTokens, SuppressedCondition) {
        let mut rng = synthetic::rng(seed);
        let recs = synthetic::concept_tokens(&mut rng, 40, d_c, k, 0.1);
        let m = assemble_concept_matrix(&recs, &DEFAULT_SELECTION).unwrap();
        let s = build_semantic_subspace(&m, k).unwrap();
        let c =
            ConditionTokens::from_matrix(oracle::gaussian_matrix(&mut rng, n_tokens, d_c)).unwrap();
        let sup = suppress_condition(&c, &s, &SuppressionConfig::for_subspace(&s)).unwrap();
        (s, c, sup)
    }

    #[test]
    fn loss_examples() {
        let a = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(noise_guide_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[1] += 1.0;
        assert!((noise_guide_loss(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(noise_guide_loss(&a, &Vector::zeros(2)).is_err());

        let mut rng = synthetic::rng(32);
        let p = oracle::gaussian_vector(&mut rng, 32);
        let q = oracle::gaussian_vector(&mut rng, 32);
        let mut naive = 0.0;
        for i in 0..32 {
            naive += (p[i] - q[i]) * (p[i] - q[i]);
        }
        assert!((noise_guide_loss(&p, &q).unwrap() - naive).abs() <= 1e-12 * naive);
    }

    #[test]
    fn project_gradient_cases() {
        let mut rng = synthetic::rng(3);
        let b = SubspaceBasis::from_span(&oracle::gaussian_matrix(&mut rng, 16, 4)).unwrap();
        let inside = (b.vectors() * oracle::gaussian_matrix(&mut rng, 4, 5)).transpose();
        assert!(project_gradient(&inside, &b).unwrap().norm() <= 1e-12 * inside.norm());

        let g = oracle::gaussian_matrix(&mut rng, 5, 16);
        let outside = &g - &g * b.projector();
        assert!(
            (project_gradient(&outside, &b).unwrap() - &outside).norm() <= 1e-12 * outside.norm()
        );

        let explicit = &g * (Matrix::identity(16, 16) - b.projector());
        let projected = project_gradient(&g, &b).unwrap();
        assert!((&projected - explicit).amax() <= 1e-12);
        for (row, orig) in projected.row_iter().zip(g.row_iter()) {
            for j in 0..4 {
                assert!(row.dot(&b.column(j).transpose()).abs() <= 1e-10 * orig.norm());
            }
        }
        assert!(project_gradient(&Matrix::zeros(2, 15), &b).is_err());
    }

    #[test]
    fn sampler_step_examples() {
        let x = Vector::from_vec(vec![1.0, -2.0]);
        assert_eq!(toy_sampler_step(&x, &Vector::zeros(2), 3, 50).unwrap(), x);
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let out = toy_sampler_step(&Vector::zeros(2), &e1, 0, 50).unwrap();
        assert_eq!(out, Vector::from_vec(vec![-1.0 / 50.0, 0.0]));
        let mut y = x.clone();
        let eps = Vector::from_vec(vec![0.3, 0.7]);
        for t in 0..50 {
            y = toy_sampler_step(&y, &eps, t, 50).unwrap();
        }
        assert!((y - (&x - &eps)).amax() < 1e-12);
        assert!(toy_sampler_step(&x, &e1, 0, 0).is_err());
        assert!(toy_sampler_step(&x, &Vector::zeros(3), 0, 5).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let den = ToyDenoiser::new(5, 3, 6, 8, 10);
        let mut rng = synthetic::rng(55);
        for t in [0, 4, 10] {
            let x = oracle::gaussian_vector(&mut rng, 8);
            let c = oracle::gaussian_matrix(&mut rng, 3, 6);
            let target = oracle::gaussian_vector(&mut rng, 8);
            let g = den.half_sq_gradient(&x, t, &c, &target).unwrap();
            let fd = finite_diff_gradient(&den, &x, t, &c, &target).unwrap();
            assert!((&g - &fd).norm() <= 1e-5 * g.norm());
        }
    }

    #[test]
    fn zero_condition_block_has_zero_gradient() {
        let base = ToyDenoiser::new(1, 2, 3, 4, 2);
        let steps = (0..=2)
            .map(|t| {
                let mut s = base.step(t).unwrap().clone();
                s.condition.fill(0.0);
                s
            })
            .collect();
        let den = ToyDenoiser::from_steps(2, 3, steps).unwrap();
        let mut rng = synthetic::rng(2);
        let x = oracle::gaussian_vector(&mut rng, 4);
        let c = oracle::gaussian_matrix(&mut rng, 2, 3);
        let target = oracle::gaussian_vector(&mut rng, 4);
        assert_eq!(
            den.half_sq_gradient(&x, 1, &c, &target).unwrap().amax(),
            0.0
        );
        assert_eq!(
            finite_diff_gradient(&den, &x, 1, &c, &target)
                .unwrap()
                .amax(),
            0.0
        );
    }

    #[test]
    fn gradient_vanishes_at_unconstrained_minimum() {
        // wide condition block: some c reproduces the target exactly
        let den = ToyDenoiser::new(9, 4, 4, 6, 1);
        let mut rng = synthetic::rng(9);
        let x = oracle::gaussian_vector(&mut rng, 6);
        let c0 = oracle::gaussian_matrix(&mut rng, 4, 4);
        let target = den.predict(&x, 1, &c0).unwrap();
        let fd = finite_diff_gradient(&den, &x, 1, &c0, &target).unwrap();
        assert!(fd.norm() <= 1e-7);
        assert!(den.half_sq_gradient(&x, 1, &c0, &target).unwrap().norm() <= 1e-12);
    }

    #[test]
    fn toy_denoiser_is_deterministic_and_checks_shapes() {
        let a = ToyDenoiser::new(42, 2, 3, 4, 5);
        let b = ToyDenoiser::new(42, 2, 3, 4, 5);
        assert_eq!(a, b);
        assert_ne!(a.step(1).unwrap(), a.step(2).unwrap());
        assert_ne!(a, ToyDenoiser::new(43, 2, 3, 4, 5));
        assert!(a
            .predict(&Vector::zeros(3), 0, &Matrix::zeros(2, 3))
            .is_err());
        assert!(a
            .predict(&Vector::zeros(4), 0, &Matrix::zeros(3, 3))
            .is_err());
        assert!(a
            .predict(&Vector::zeros(4), 6, &Matrix::zeros(2, 3))
            .is_err());
    }

    #[test]
    fn stationary_point_leaves_tokens_unchanged() {
        let (s, c, _) = setup(1, 4, 16, 3);
        // suppressed == original: the target is hit exactly, gradient is zero
        let sup = SuppressedCondition {
            tokens: c.tokens().clone(),
            per_token_delta: vec![0.0; 4],
            config_used: SuppressionConfig::for_subspace(&s),
        };
        let den = ToyDenoiser::new(42, 4, 16, 8, 50);
        let x0 = Vector::zeros(8);
        let (out, trace) =
            run_optimization(&c, &sup, &s, &den, &OptimizationConfig::default(), &x0).unwrap();
        assert_eq!(&out, c.tokens());
        assert!(trace
            .steps
            .iter()
            .all(|r| r.grad_norm == 0.0 && r.loss_before == 0.0));
    }

    #[test]
    fn plain_gd_freezes_subspace_and_descends() {
        let (s, c, sup) = setup(2, 4, 16, 3);
        let den = ToyDenoiser::new(42, 4, 16, 8, 50);
        let cfg = OptimizationConfig::default();
        assert!(cfg.learning_rate <= den.stable_learning_rate(30..50).unwrap());
        let x0 = oracle::gaussian_vector(&mut synthetic::rng(3), 8);
        let (out, trace) = run_optimization(&c, &sup, &s, &den, &cfg, &x0).unwrap();
        assert_eq!(trace.steps.len(), 20);
        assert_eq!(trace.steps[0].t, 30);
        assert!(trace.max_relative_drift() <= 1e-8);
        assert!(trace.loss_non_increasing());
        assert!(trace.steps.last().unwrap().loss_after < trace.steps[0].loss_before);
        let moved = (&out - &sup.tokens) * s.basis().vectors();
        assert!(moved.norm() <= 1e-8 * sup.tokens.norm());
        assert_eq!(trace.final_tokens, out);
    }

    #[test]
    fn adam_like_keeps_subspace_frozen() {
        let (s, c, sup) = setup(4, 4, 16, 3);
        let den = ToyDenoiser::new(7, 4, 16, 8, 50);
        let cfg = OptimizationConfig {
            optimizer: OptimizerKind::adam_default(),
            updates_per_step: 3,
            learning_rate: 1e-2,
            ..OptimizationConfig::default()
        };
        let x0 = Vector::zeros(8);
        let (out, trace) = run_optimization(&c, &sup, &s, &den, &cfg, &x0).unwrap();
        assert!(trace.max_relative_drift() <= 1e-8);
        assert!((&out - &sup.tokens).norm() > 0.0);
    }

    #[test]
    fn huge_learning_rate_is_reported() {
        let (s, c, sup) = setup(5, 4, 16, 3);
        let den = ToyDenoiser::new(42, 4, 16, 8, 50);
        let cfg = OptimizationConfig {
            learning_rate: 1e6,
            t_start: 0,
            ..OptimizationConfig::default()
        };
        let res = run_optimization(&c, &sup, &s, &den, &cfg, &Vector::zeros(8));
        assert!(
            matches!(res, Err(Error::NonFiniteGradient { .. })),
            "{res:?}"
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizationConfig::default();
        assert!(cfg.validate(50).is_ok());
        assert!(cfg.validate(40).is_err());
        cfg.t_start = 51;
        assert!(cfg.validate(60).is_err());
        cfg = OptimizationConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate(50).is_err());
        cfg = OptimizationConfig {
            updates_per_step: 0,
            ..Default::default()
        };
        assert!(cfg.validate(50).is_err());
        assert_eq!(
            OptimizerKind::from_name("adam_like").unwrap().name(),
            "adam_like"
        );
        assert!(OptimizerKind::from_name("sgd").is_none());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (s, c, sup) = setup(6, 4, 16, 3);
        let den = ToyDenoiser::new(42, 4, 16, 8, 50);
        let res = run_optimization(
            &c,
            &sup,
            &s,
            &den,
            &OptimizationConfig::default(),
            &Vector::zeros(7),
        );
        assert!(matches!(res, Err(Error::ShapeMismatch(_))));
        let short = ConditionTokens::from_matrix(Matrix::zeros(3, 16)).unwrap();
        let res = run_optimization(
            &short,
            &sup,
            &s,
            &den,
            &OptimizationConfig::default(),
            &Vector::zeros(8),
        );
        assert!(matches!(res, Err(Error::ShapeMismatch(_))));
    }
}
