use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use subspace_erasure::concept::{self, ConceptTokenMatrix, DEFAULT_SELECTION};
use subspace_erasure::io::{self, RunConfig};
use subspace_erasure::linalg::{self, Matrix};
use subspace_erasure::{optimizer, oracle, suppression, synthetic};

fn bare(matrix: Matrix) -> ConceptTokenMatrix {
    ConceptTokenMatrix {
        matrix,
        provenance: Vec::new(),
    }
}

fn f32_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = synthetic::rng(seed);
    oracle::gaussian_matrix(&mut rng, rows, cols).map(|x| x as f32 as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embeddings_round_trip(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let m = f32_matrix(rows, cols, seed);
        let mut bytes = Vec::new();
        io::encode_embeddings(&mut bytes, &m).unwrap();
        prop_assert_eq!(bytes.len(), io::EMB_HEADER_LEN + 4 * rows * cols);
        let back = io::decode_embeddings(&bytes).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn truncated_or_padded_payload_is_rejected(
        rows in 1usize..10, cols in 1usize..10, seed in any::<u64>(), cut in 1usize..4,
    ) {
        let m = f32_matrix(rows, cols, seed);
        let mut bytes = Vec::new();
        io::encode_embeddings(&mut bytes, &m).unwrap();
        prop_assert!(io::decode_embeddings(&bytes[..bytes.len() - cut]).is_err());
        bytes.extend(std::iter::repeat_n(0u8, cut));
        prop_assert!(io::decode_embeddings(&bytes).is_err());
    }

    #[test]
    fn subspace_round_trip(n in 4usize..40, d in 4usize..24, k in 1usize..4, seed in any::<u64>()) {
        let mut rng = synthetic::rng(seed);
        let recs = synthetic::concept_tokens(&mut rng, n, d, k, 0.05);
        let s = concept::build_semantic_subspace(
            &concept::assemble_concept_matrix(&recs, &DEFAULT_SELECTION).unwrap(),
            k,
        ).unwrap();
        let mut bytes = Vec::new();
        io::encode_subspace(&mut bytes, &s).unwrap();
        let back = io::decode_subspace(&bytes).unwrap();
        let mut again = Vec::new();
        io::encode_subspace(&mut again, &back).unwrap();
        prop_assert_eq!(again, bytes);
        prop_assert_eq!((back.n_rows(), back.d_c(), back.k()), (s.n_rows(), s.d_c(), s.k()));
    }

    #[test]
    fn run_config_round_trips_through_json(
        k in 1usize..20, start in 0usize..40, len in 0usize..10, lr in 1e-6f64..1.0,
        adam in any::<bool>(), updates in 1usize..4, skip in any::<bool>(), seed in any::<u64>(),
    ) {
        let cfg = RunConfig {
            k,
            t_start: start,
            t_end: start + len,
            learning_rate: lr,
            optimizer: if adam { "adam_like" } else { "plain_gd" }.into(),
            updates_per_step: updates,
            skip_sot: skip,
            seed,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(io::parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn projection_is_idempotent(d in 2usize..32, k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(d);
        let mut rng = synthetic::rng(seed);
        let b = linalg::SubspaceBasis::new(synthetic::random_orthonormal(&mut rng, d, k)).unwrap();
        let x = oracle::gaussian_vector(&mut rng, d);
        let p = linalg::project(&x, &b).unwrap();
        let pp = linalg::project(&p, &b).unwrap();
        prop_assert!((pp - &p).amax() <= 1e-10 * x.amax());
    }

    #[test]
    fn projected_gradient_has_no_subspace_component(
        n in 1usize..6, d in 4usize..32, k in 1usize..4, seed in any::<u64>(),
    ) {
        let mut rng = synthetic::rng(seed);
        let b = linalg::SubspaceBasis::new(synthetic::random_orthonormal(&mut rng, d, k.min(d))).unwrap();
        let g = oracle::gaussian_matrix(&mut rng, n, d);
        let gp = optimizer::project_gradient(&g, &b).unwrap();
        prop_assert!((&gp * b.vectors()).amax() <= 1e-12 * g.amax());
    }
}

/// No random rank-k matrix has a smaller Frobenius error than the truncated SVD.
#[test]
fn eckart_young_optimality() {
    let mut rng = synthetic::rng(11);
    for case in 0..200 {
        let rows = rng.random_range(2..=20);
        let cols = rng.random_range(2..=20);
        let k = rng.random_range(1..rows.min(cols));
        let m = oracle::gaussian_matrix(&mut rng, rows, cols);
        let f = linalg::svd(&m).unwrap();
        let best = (&m - linalg::truncate_reconstruct(&f, k).unwrap()).norm();
        let tail: f64 = f.sigma().iter().skip(k).map(|s| s * s).sum::<f64>().sqrt();
        assert!(
            (best - tail).abs() <= 1e-8 * tail.max(1e-300),
            "case {case}"
        );
        for _ in 0..5 {
            // Random competitor, and a perturbation of the optimum itself.
            let left = oracle::gaussian_matrix(&mut rng, rows, k);
            let right = oracle::gaussian_matrix(&mut rng, k, cols);
            let random = &left * &right;
            let nudged = linalg::truncate_reconstruct(&f, k).unwrap() + &left * &right * 1e-3;
            let nudged = linalg::truncate_reconstruct(&linalg::svd(&nudged).unwrap(), k).unwrap();
            assert!(
                (&m - random).norm() >= best,
                "case {case}: random beat truncation"
            );
            assert!(
                (&m - nudged).norm() >= best * (1.0 - 1e-12),
                "case {case}: nudge beat truncation"
            );
        }
    }
}

#[test]
fn basis_span_is_invariant_to_row_order() {
    let mut rng = synthetic::rng(12);
    for _ in 0..20 {
        let m = oracle::gaussian_matrix(&mut rng, 50, 16);
        let mut order: Vec<usize> = (0..50).collect();
        order.shuffle(&mut rng);
        let permuted = Matrix::from_fn(50, 16, |i, j| m[(order[i], j)]);
        let a = concept::build_semantic_subspace(&bare(m), 5).unwrap();
        let b = concept::build_semantic_subspace(&bare(permuted), 5).unwrap();
        let angles = linalg::principal_angles(a.basis(), b.basis()).unwrap();
        assert!(angles.iter().all(|&t| t <= 1e-8), "{angles:?}");
    }
}

#[test]
fn basis_agrees_with_gram_oracle_on_reference_shape() {
    let mut rng = synthetic::rng(7);
    let m = oracle::gaussian_matrix(&mut rng, 50, 16);
    let s = concept::build_semantic_subspace(&bare(m.clone()), 5).unwrap();
    let reference =
        linalg::SubspaceBasis::from_span(&oracle::top_right_vectors_via_gram(&m, 5)).unwrap();
    let angles = linalg::principal_angles(s.basis(), &reference).unwrap();
    assert!(angles.iter().all(|&t| t <= 1e-6), "{angles:?}");
}

/// Suppressing twice moves the token by at most `TAU · ‖x‖`. The tolerance
/// was set from the double-suppression Gram oracle on d_c = 16 concepts with
/// 200 rows and k = 3, where the worst of 500 tokens measured about 0.03.
const TAU: f64 = 0.05;

#[test]
fn suppression_is_approximately_idempotent() {
    let mut rng = synthetic::rng(13);
    let recs = synthetic::concept_tokens(&mut rng, 200, 16, 3, 0.1);
    let s = concept::build_semantic_subspace(
        &concept::assemble_concept_matrix(&recs, &DEFAULT_SELECTION).unwrap(),
        3,
    )
    .unwrap();
    let rhat = s.reconstruct();
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let x = oracle::gaussian_vector(&mut rng, 16);
        let once = suppression::suppress_token(&x, &s).unwrap();
        let twice = suppression::suppress_token(&once, &s).unwrap();
        let lib = (&twice - &once).norm() / x.norm();

        let o1 = oracle::suppress_via_gram(&x, &rhat, 3);
        let o2 = oracle::suppress_via_gram(&o1, &rhat, 3);
        let reference = (&o2 - &o1).norm() / x.norm();
        assert!(
            (lib - reference).abs() <= 1e-6,
            "library {lib} vs oracle {reference}"
        );
        worst = worst.max(lib);
    }
    assert!(
        worst <= TAU,
        "double suppression moved a token by {worst:.4} > {TAU}"
    );
}

#[test]
fn sampler_telescopes_with_constant_noise() {
    let mut rng = synthetic::rng(14);
    let x0 = oracle::gaussian_vector(&mut rng, 6);
    let eps = oracle::gaussian_vector(&mut rng, 6);
    let mut x = x0.clone();
    for t in 0..50 {
        x = optimizer::toy_sampler_step(&x, &eps, t, 50).unwrap();
    }
    assert!((x - (x0 - eps)).amax() <= 1e-12);
}
