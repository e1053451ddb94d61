// Regenerates the bundled synthetic fixtures under `fixtures/`.
//
// ```text
// cargo run --example make_fixtures
// ```

use std::path::Path;

use subspace_erasure::{io, synthetic};

pub fn run_example() -> subspace_erasure::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    write_fixtures(&dir)?;
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}

pub fn write_fixtures(dir: &Path) -> subspace_erasure::Result<()> {
    std::fs::create_dir_all(dir)?;
    let f = synthetic::fixture(42, 200, 32, 5);
    io::write_embeddings(
        &f.concept.matrix,
        Some(&f.concept.meta),
        &dir.join("concept.sseb"),
    )?;
    io::write_embeddings(
        &f.condition.matrix,
        Some(&f.condition.meta),
        &dir.join("condition.sseb"),
    )?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
