// Write and read the binary embedding and subspace formats, plus the JSON
// sidecar and run configuration.

use subspace_erasure::concept::{self, DEFAULT_SELECTION};
use subspace_erasure::{io, synthetic};

pub fn run_example() -> subspace_erasure::Result<()> {
    let dir = std::env::temp_dir().join(format!("sse-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let f = synthetic::fixture(42, 200, 32, 5);

    let emb = dir.join("concept.sseb");
    io::write_embeddings(&f.concept.matrix, Some(&f.concept.meta), &emb)?;
    let (m, meta) = io::read_embeddings(&emb)?;
    assert_eq!(m, f.concept.matrix);
    println!(
        "{}: {} bytes, sidecar {} with {} tokens",
        emb.display(),
        std::fs::metadata(&emb)?.len(),
        io::sidecar_path(&emb).display(),
        meta.map_or(0, |m| m.tokens.len())
    );

    let records = io::token_records(&f.concept.matrix, &f.concept.meta)?;
    let s = concept::build_semantic_subspace(
        &concept::assemble_concept_matrix(&records, &DEFAULT_SELECTION)?,
        5,
    )?;
    let sub = dir.join("concept.sses");
    io::write_subspace(&s, &sub)?;
    let back = io::read_subspace(&sub)?;
    println!(
        "{}: {} bytes (expected {}), k = {}",
        sub.display(),
        std::fs::metadata(&sub)?.len(),
        io::subspace_bundle_len(s.n_rows(), s.d_c(), s.k()),
        back.k()
    );

    let cfg = io::parse_config(r#"{"k": 5, "optimizer": "adam_like", "t_end": 40}"#)?;
    println!("config: {cfg:?}");
    match io::parse_config(r#"{"k": 0}"#) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("file_formats example failed");
}
