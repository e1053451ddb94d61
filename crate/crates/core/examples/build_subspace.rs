// Assemble a concept token matrix from annotated rows and factor it into a
// rank-k semantic subspace.

use subspace_erasure::concept::{self, ConceptCategory, DEFAULT_SELECTION};
use subspace_erasure::{io, linalg, synthetic};

pub fn run_example() -> subspace_erasure::Result<()> {
    let f = synthetic::fixture(42, 200, 32, 5);
    let records = io::token_records(&f.concept.matrix, &f.concept.meta)?;
    let matrix = concept::assemble_concept_matrix(&records, &DEFAULT_SELECTION)?;
    let k = ConceptCategory::Nudity.default_k();
    let s = concept::build_semantic_subspace(&matrix, k)?;

    println!("concept matrix: {} x {}", matrix.n_rows(), matrix.d_c());
    println!("top singular values: {:.3?}", s.sigma_k().as_slice());
    let full = linalg::svd(&matrix.matrix)?;
    let captured: f64 = s.sigma_k().iter().map(|x| x * x).sum();
    let total: f64 = full.sigma().iter().map(|x| x * x).sum();
    println!("energy captured by k = {k}: {:.4}", captured / total);
    println!(
        "basis orthonormality deviation: {:.2e}",
        linalg::orthonormality_deviation(s.basis().vectors())
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("build_subspace example failed");
}
