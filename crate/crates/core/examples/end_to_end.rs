// The full pipeline through the command-line entry point: build the
// subspace, suppress a condition, optimize, and check stability.

use subspace_erasure::cli::{self, ExitStatus};

pub fn run_example() -> subspace_erasure::Result<()> {
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let dir = std::env::temp_dir().join(format!("sse-e2e-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let fx = |name: &str| fixtures.join(name).to_string_lossy().into_owned();

    let steps: [Vec<String>; 4] = [
        vec![
            "build-subspace".into(),
            "--embeddings".into(),
            fx("concept.sseb"),
            "--k".into(),
            "5".into(),
            "--out".into(),
            p("concept.sses"),
        ],
        vec![
            "suppress".into(),
            "--subspace".into(),
            p("concept.sses"),
            "--condition".into(),
            fx("condition.sseb"),
            "--out".into(),
            p("suppressed.sseb"),
            "--report".into(),
            p("deltas.json"),
        ],
        vec![
            "optimize".into(),
            "--subspace".into(),
            p("concept.sses"),
            "--original".into(),
            fx("condition.sseb"),
            "--suppressed".into(),
            p("suppressed.sseb"),
            "--seed".into(),
            "42".into(),
            "--out".into(),
            p("optimized.sseb"),
            "--trace".into(),
            p("trace.json"),
        ],
        vec![
            "perturb".into(),
            "--embeddings".into(),
            fx("concept.sseb"),
            "--k".into(),
            "5".into(),
            "--trials".into(),
            "20".into(),
            "--out".into(),
            p("perturb.json"),
        ],
    ];
    for args in steps {
        let status = cli::run(std::iter::once("sse".to_string()).chain(args.iter().cloned()));
        println!("sse {} -> exit {}", args[0], status.code());
        if status != ExitStatus::Success {
            return Err(subspace_erasure::Error::InvalidConfig(format!(
                "{} failed",
                args[0]
            )));
        }
    }
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("trace.json"))?)?;
    println!("optimizer drift: {}", trace["max_relative_drift"]);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("end_to_end example failed");
}
