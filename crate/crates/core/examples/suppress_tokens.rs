// Suppress the concept subspace in each token of a prompt condition and
// report how much of each token changed.

use subspace_erasure::concept::{self, DEFAULT_SELECTION};
use subspace_erasure::suppression::{self, SuppressionConfig};
use subspace_erasure::{io, linalg, synthetic};

pub fn run_example() -> subspace_erasure::Result<()> {
    let f = synthetic::fixture(42, 200, 32, 5);
    let records = io::token_records(&f.concept.matrix, &f.concept.meta)?;
    let s = concept::build_semantic_subspace(
        &concept::assemble_concept_matrix(&records, &DEFAULT_SELECTION)?,
        5,
    )?;
    let c = io::condition_tokens(f.condition.matrix.clone(), Some(&f.condition.meta))?;

    let mut cfg = SuppressionConfig::for_subspace(&s);
    cfg.skip_sot = true;
    let out = suppression::suppress_condition(&c, &s, &cfg)?;

    println!(
        "{:<10} {:>6} {:>10} {:>10} {:>10}",
        "token", "kind", "mse", "energy in", "energy out"
    );
    for (i, meta) in f.condition.meta.tokens.iter().enumerate() {
        let before = c.tokens().row(i).transpose();
        let after = out.tokens.row(i).transpose();
        let e_after = if after.norm() > 0.0 {
            linalg::residual_energy(&after, s.basis())?
        } else {
            0.0
        };
        println!(
            "{:<10} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            meta.text,
            meta.kind,
            out.per_token_delta[i],
            linalg::residual_energy(&before, s.basis())?,
            e_after
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("suppress_tokens example failed");
}
