// Refine suppressed tokens against a toy linear denoiser while keeping
// every update orthogonal to the concept subspace.

use subspace_erasure::concept::{self, DEFAULT_SELECTION};
use subspace_erasure::optimizer::{OptimizationConfig, OptimizerKind, ToyDenoiser};
use subspace_erasure::suppression::{self, SuppressionConfig};
use subspace_erasure::{cli, io, optimizer, synthetic};

pub fn run_example() -> subspace_erasure::Result<()> {
    let f = synthetic::fixture(42, 200, 32, 5);
    let records = io::token_records(&f.concept.matrix, &f.concept.meta)?;
    let s = concept::build_semantic_subspace(
        &concept::assemble_concept_matrix(&records, &DEFAULT_SELECTION)?,
        5,
    )?;
    let original = io::condition_tokens(f.condition.matrix.clone(), Some(&f.condition.meta))?;
    let suppressed =
        suppression::suppress_condition(&original, &s, &SuppressionConfig::for_subspace(&s))?;

    let (n, d) = original.tokens().shape();
    let den = ToyDenoiser::new(42, n, d, 16, 50);
    let lr = 0.5 * den.stable_learning_rate(30..50)?;
    let x0 = cli::initial_state(42, 16);

    for kind in [OptimizerKind::PlainGd, OptimizerKind::adam_default()] {
        let cfg = OptimizationConfig {
            learning_rate: if kind == OptimizerKind::PlainGd {
                lr
            } else {
                0.01
            },
            optimizer: kind,
            ..OptimizationConfig::default()
        };
        let (_, trace) = optimizer::run_optimization(&original, &suppressed, &s, &den, &cfg, &x0)?;
        // Each step has its own target noise, so compare losses within a step.
        let before: f64 = trace.steps.iter().map(|r| r.loss_before).sum();
        let after: f64 = trace.steps.iter().map(|r| r.loss_after).sum();
        let improved = trace
            .steps
            .iter()
            .filter(|r| r.loss_after <= r.loss_before)
            .count();
        println!(
            "{:>10}: loss reduced in {improved}/{} steps, summed loss {before:.3} -> {after:.3}, max relative drift {:.2e}",
            cfg.optimizer.name(),
            trace.steps.len(),
            trace.max_relative_drift()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("orthogonal_optimization example failed");
}
