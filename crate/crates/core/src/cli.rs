//! The `sse` command-line tool.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or
//! format error, 4 numerical error. Progress goes to stderr; artifacts are
//! written only to the files named by flags.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::concept::{self, TokenKind};
use crate::error::{Error, Result};
use crate::io::{self, RunConfig};
use crate::linalg::{Matrix, Vector};
use crate::optimizer::{self, OptimizationConfig, OptimizationTrace, OptimizerKind, ToyDenoiser};
use crate::perturbation::{self, PerturbationContext};
use crate::suppression::{self, SuppressedCondition, SuppressionConfig};
use crate::{linalg, oracle, verify};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    VerificationFailure = 1,
    Usage = 2,
    Format = 3,
    Numerical = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

impl From<&Error> for ExitStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::EmptySelection | Error::RankOutOfBounds { .. } | Error::InvalidConfig(_) => {
                ExitStatus::Usage
            }
            Error::NonFiniteGradient { .. }
            | Error::DegenerateConcept { .. }
            | Error::NonFiniteInput
            | Error::ZeroVector => ExitStatus::Numerical,
            _ => ExitStatus::Format,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sse",
    version,
    about = "Semantic subspace concept erasure toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the concept subspace bundle from annotated token embeddings.
    BuildSubspace(BuildArgs),
    /// Suppress the concept subspace in every token of a condition.
    Suppress(SuppressArgs),
    /// Refine suppressed tokens with gradient-orthogonal optimization.
    Optimize(OptimizeArgs),
    /// Measure subspace stability when one token row is appended.
    Perturb(PerturbArgs),
    /// Run the built-in property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    /// Token kinds stacked into the concept matrix.
    #[arg(long, value_delimiter = ',', default_value = "target,eot")]
    pub select: Vec<TokenKind>,
    /// Subtract the column mean before factoring.
    #[arg(long)]
    pub center: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SuppressArgs {
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub condition: PathBuf,
    #[arg(long)]
    pub skip_sot: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Run configuration JSON; only `skip_sot` is used here.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserChoice {
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerChoice {
    #[value(alias = "plain_gd")]
    PlainGd,
    #[value(alias = "adam_like")]
    AdamLike,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub suppressed: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    pub denoiser: DenoiserChoice,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long)]
    pub t_end: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerChoice>,
    #[arg(long)]
    pub updates_per_step: Option<usize>,
    /// Total sampling steps T of the toy sampler.
    #[arg(long, default_value_t = 50)]
    pub total_steps: usize,
    /// Latent state dimension of the toy denoiser.
    #[arg(long, default_value_t = 16)]
    pub state_dim: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Without `--trials` the last row is the appended token and the rest form A.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    /// Append this many random unit rows to the whole matrix instead.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    Projector,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Swap in a deliberately wrong component (self-test of the suite).
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

/// Parses arguments, runs the command and maps the outcome to an exit status.
pub fn run<I, T>(args: I) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitStatus::Usage
            } else {
                ExitStatus::Success
            };
        }
    };
    let outcome = match &cli.command {
        Command::BuildSubspace(a) => build_subspace(a),
        Command::Suppress(a) => suppress(a),
        Command::Optimize(a) => optimize(a),
        Command::Perturb(a) => perturb(a),
        Command::Verify(a) => return verify(a),
    };
    match outcome {
        Ok(status) => status,
        Err(err) => {
            eprintln!("error: {err}");
            ExitStatus::from(&err)
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn build_subspace(a: &BuildArgs) -> Result<ExitStatus> {
    let (m, meta) = io::read_embeddings(&a.embeddings)?;
    let meta = meta.ok_or_else(|| Error::MissingSidecar(io::sidecar_path(&a.embeddings)))?;
    let records = io::token_records(&m, &meta)?;
    let matrix = concept::assemble_concept_matrix(&records, &a.select)?;
    eprintln!(
        "building subspace from {} of {} annotated rows",
        matrix.n_rows(),
        records.len()
    );
    let s = concept::build_semantic_subspace_with(&matrix, a.k as usize, a.center)?;
    io::write_subspace(&s, &a.out)?;
    println!("N = {}", s.n_rows());
    println!("d_c = {}", s.d_c());
    println!("k = {}", s.k());
    for (i, sigma) in s.sigma_k().iter().enumerate() {
        println!("sigma_{} = {sigma:.6}", i + 1);
    }
    Ok(ExitStatus::Success)
}

pub fn suppress(a: &SuppressArgs) -> Result<ExitStatus> {
    let cfg = match &a.config {
        Some(p) => io::load_config(p)?,
        None => RunConfig::default(),
    };
    let s = io::read_subspace(&a.subspace)?;
    let (m, meta) = io::read_embeddings(&a.condition)?;
    let c = io::condition_tokens(m, meta.as_ref())?;
    let mut scfg = SuppressionConfig::for_subspace(&s);
    scfg.skip_sot = a.skip_sot || cfg.skip_sot;
    let out = suppression::suppress_condition(&c, &s, &scfg)?;
    io::write_embeddings(&out.tokens, meta.as_ref(), &a.out)?;
    write_json(&io::delta_report(&c, &out.per_token_delta), &a.report)?;
    eprintln!("suppressed {} tokens (k = {})", c.n_tokens(), s.k());
    Ok(ExitStatus::Success)
}

#[derive(Debug, Serialize)]
struct TraceReport<'a> {
    denoiser: &'static str,
    seed: u64,
    state_dim: usize,
    total_steps: usize,
    config: &'a OptimizationConfig,
    max_relative_drift: f64,
    loss_non_increasing: bool,
    steps: &'a [optimizer::StepRecord],
}

/// Initial latent state for a seeded run: standard normal entries drawn from
/// a ChaCha8 stream reserved for this purpose.
pub fn initial_state(seed: u64, dim: usize) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    oracle::gaussian_vector(&mut rng, dim)
}

/// Settings resolved from config file and flags (flags win).
pub fn resolve_optimization(a: &OptimizeArgs) -> Result<(OptimizationConfig, u64)> {
    let base = match &a.config {
        Some(p) => io::load_config(p)?,
        None => RunConfig::default(),
    };
    let optimizer = match a.optimizer {
        Some(OptimizerChoice::PlainGd) => OptimizerKind::PlainGd,
        Some(OptimizerChoice::AdamLike) => OptimizerKind::adam_default(),
        None => base.optimizer_kind(),
    };
    let cfg = OptimizationConfig {
        t_start: a.t_start.unwrap_or(base.t_start),
        t_end: a.t_end.unwrap_or(base.t_end),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        optimizer,
        updates_per_step: a.updates_per_step.unwrap_or(base.updates_per_step),
    };
    cfg.validate(a.total_steps)?;
    Ok((cfg, a.seed.unwrap_or(base.seed)))
}

/// Runs the optimization stage on in-memory inputs exactly as `sse optimize`
/// does on files.
pub fn optimize_tokens(
    s: &concept::SemanticSubspace,
    original: &suppression::ConditionTokens,
    suppressed: &Matrix,
    cfg: &OptimizationConfig,
    seed: u64,
    state_dim: usize,
    total_steps: usize,
) -> Result<(Matrix, OptimizationTrace)> {
    let (n, d) = original.tokens().shape();
    if suppressed.shape() != (n, d) {
        return Err(Error::ShapeMismatch(format!(
            "original is {n}x{d} but suppressed is {}x{}",
            suppressed.nrows(),
            suppressed.ncols()
        )));
    }
    let per_token_delta = (0..n)
        .map(|i| (original.tokens().row(i) - suppressed.row(i)).norm_squared() / d as f64)
        .collect();
    let sup = SuppressedCondition {
        tokens: suppressed.clone(),
        per_token_delta,
        config_used: SuppressionConfig::for_subspace(s),
    };
    let den = ToyDenoiser::new(seed, n, d, state_dim, total_steps);
    let x0 = initial_state(seed, state_dim);
    optimizer::run_optimization(original, &sup, s, &den, cfg, &x0)
}

pub fn optimize(a: &OptimizeArgs) -> Result<ExitStatus> {
    let (cfg, seed) = resolve_optimization(a)?;
    let s = io::read_subspace(&a.subspace)?;
    let (orig, meta) = io::read_embeddings(&a.original)?;
    let original = io::condition_tokens(orig, meta.as_ref())?;
    let (suppressed, _) = io::read_embeddings(&a.suppressed)?;
    if original.d_c() != s.d_c() {
        return Err(Error::DimensionMismatch {
            context: "condition vs subspace",
            expected: s.d_c(),
            found: original.d_c(),
        });
    }
    eprintln!(
        "optimizing {} tokens over steps {}..{} ({}, lr {})",
        original.n_tokens(),
        cfg.t_start,
        cfg.t_end,
        cfg.optimizer.name(),
        cfg.learning_rate
    );
    let (tokens, trace) = optimize_tokens(
        &s,
        &original,
        &suppressed,
        &cfg,
        seed,
        a.state_dim,
        a.total_steps,
    )?;
    io::write_embeddings(&tokens, meta.as_ref(), &a.out)?;
    let report = TraceReport {
        denoiser: "toy",
        seed,
        state_dim: a.state_dim,
        total_steps: a.total_steps,
        config: &cfg,
        max_relative_drift: trace.max_relative_drift(),
        loss_non_increasing: trace.loss_non_increasing(),
        steps: &trace.steps,
    };
    write_json(&report, &a.trace)?;
    if report.max_relative_drift > 1e-8 {
        eprintln!(
            "subspace drift {:.2e} exceeds 1e-8",
            report.max_relative_drift
        );
        return Ok(ExitStatus::VerificationFailure);
    }
    Ok(ExitStatus::Success)
}

pub fn perturb(a: &PerturbArgs) -> Result<ExitStatus> {
    let (m, _) = io::read_embeddings(&a.embeddings)?;
    let k = a.k as usize;
    match a.trials {
        None => {
            if m.nrows() < 2 {
                return Err(Error::ShapeMismatch(
                    "need at least two rows (matrix plus appended row)".into(),
                ));
            }
            let base = m.rows(0, m.nrows() - 1).into_owned();
            let a_new: Vector = m.row(m.nrows() - 1).transpose();
            let ctx = PerturbationContext::new(&base, k)?;
            let report = ctx.report(&a_new)?;
            if report.bound.is_infinite() {
                eprintln!("warning: spectral gap sigma_k - sigma_k+1 vanishes; bound is +inf");
            }
            eprintln!(
                "mean angle {:.6}°, sin theta {:.3e}",
                report.mean_angle_deg, report.sin_theta
            );
            write_json(&report, &a.out)?;
        }
        Some(trials) => {
            let ctx = PerturbationContext::new(&m, k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let summary = perturbation::run_trials(&ctx, trials, &mut rng)?;
            if summary.control.bound.is_infinite() {
                eprintln!("warning: spectral gap sigma_k - sigma_k+1 vanishes; bound is +inf");
            }
            eprintln!(
                "{trials} trials: mean angle {:.6}°, max angle {:.6}°, {} bound violations",
                summary.mean_angle_deg, summary.max_angle_deg, summary.violations
            );
            write_json(&summary, &a.out)?;
        }
    }
    Ok(ExitStatus::Success)
}

fn broken_projector(x: &Vector, b: &linalg::SubspaceBasis) -> Result<Vector> {
    Ok(linalg::project(x, b)? * 1.01)
}

pub fn verify(a: &VerifyArgs) -> ExitStatus {
    let suite = verify::Suite {
        seed: a.seed,
        projector: match a.inject_fault {
            Some(Fault::Projector) => broken_projector,
            None => linalg::project,
        },
    };
    let report = suite.run();
    println!("{report}");
    if report.all_passed() {
        ExitStatus::Success
    } else {
        ExitStatus::VerificationFailure
    }
}
