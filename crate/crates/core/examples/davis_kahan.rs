// How far does the top-k right singular subspace move when one more token
// row is appended? Compares measured angles with the Davis-Kahan bound.

use subspace_erasure::perturbation::{self, PerturbationContext};
use subspace_erasure::synthetic;

pub fn run_example() -> subspace_erasure::Result<()> {
    let mut rng = synthetic::rng(7);
    let sigma = synthetic::dominant_spectrum(5, 100.0, 0.8, 40, 1.0);
    let a = synthetic::planted_spectrum(&mut rng, 400, 64, &sigma);
    let ctx = PerturbationContext::new(&a, 5)?;

    let summary = perturbation::run_trials(&ctx, 50, &mut rng)?;
    println!(
        "50 unit rows: mean angle {:.5} deg, max {:.5} deg, max sin theta {:.2e}",
        summary.mean_angle_deg, summary.max_angle_deg, summary.max_sin_theta
    );
    println!("bound violations: {}", summary.violations);

    let report = &summary.reports[0];
    println!(
        "first trial report:\n{}",
        serde_json::to_string_pretty(report)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("davis_kahan example failed");
}
