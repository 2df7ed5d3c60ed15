use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softagg_core::evaluation::{align_and_score, compare_decompositions, compare_p_estimators, singular_diagnostics};
use softagg_core::markov::{stationary_distribution, STATIONARY_MAX_ITER, STATIONARY_TOL};
use softagg_core::spectral::{decompose, oracle_scaled_matrix, top_r_svd};
use softagg_core::synth::{check_regularity, generate_model, SynthSpec};
use softagg_core::{estimate_oracle, EstimateOptions, SoftAggregationModel, SpectralDecomposition, SvdMethod, TransitionCounts};

fn model(p: usize, r: usize, anchors: usize, seed: u64) -> SoftAggregationModel {
    generate_model(&SynthSpec::new(p, r, anchors, seed)).unwrap()
}

fn pi_of(m: &SoftAggregationModel) -> DVector<f64> {
    stationary_distribution(&m.transition_matrix().unwrap(), STATIONARY_TOL, STATIONARY_MAX_ITER)
        .unwrap()
        .into_inner()
}

fn check_spectral_invariants(d: &SpectralDecomposition, m: &DMatrix<f64>) {
    let (h, g) = d.orthonormality_error();
    assert!(h <= 1e-10 && g <= 1e-10, "orthonormality {h:e} {g:e}");
    assert!(d.max_residual(m) <= 1e-8 * d.sigma[0], "residual {:e}", d.max_residual(m));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_recovers_the_factorization(
        r in 2usize..=6,
        anchors in 1usize..=4,
        extra in 10usize..80,
        seed in any::<u64>(),
    ) {
        let m = model(r * anchors + extra, r, anchors, seed);
        let est = estimate_oracle(&m, 0.1, &EstimateOptions::default()).unwrap();
        let e = align_and_score(&est, &m).unwrap();
        prop_assert!(e.tv_v_max <= 1e-8, "tv_V {:e}", e.tv_v_max);
        prop_assert!(e.tv_u_max <= 1e-8, "tv_U {:e}", e.tv_u_max);

        // Planted anchors get one-hot weights on their own meta-state.
        for (k, set) in m.anchor_sets().iter().enumerate() {
            let col = e.permutation.iter().position(|&t| t == k).unwrap();
            for &j in set {
                for s in 0..r {
                    let want = if s == col { 1.0 } else { 0.0 };
                    prop_assert!((est.weights.weights[(j, s)] - want).abs() <= 1e-8);
                }
            }
        }

        let report = check_regularity(&m).unwrap();
        if report.anchor_margin > 0.1 + 1e-6 {
            prop_assert_eq!(&est.anchors, &m.anchors());
        }

        let d = est.decomposition.as_ref().unwrap();
        check_spectral_invariants(d, oracle_scaled_matrix(&m).unwrap().matrix());
        prop_assert!(d.h1().iter().all(|&x| x > 0.0));
    }
}

#[test]
fn oracle_subspace_is_the_scaled_v_span() {
    for seed in 0..5u64 {
        let m = model(120, 4, 3, seed);
        let pi = pi_of(&m);
        let q = oracle_scaled_matrix(&m).unwrap();
        let d = top_r_svd(&q, 4).unwrap();
        assert!(d.sigma[3] > 0.0);
        // The all-ones direction gives sigma_1 >= ||pi||_2 >= p^{-1/2}.
        assert!(d.sigma[0] >= pi.norm() - 1e-12);
        assert!(pi.norm() >= 1.0 / (120f64).sqrt());

        let vs = DMatrix::from_fn(120, 4, |j, k| m.v()[(j, k)] / pi[j].sqrt());
        let proj_v = &vs * (vs.tr_mul(&vs)).try_inverse().unwrap() * vs.transpose();
        let proj_h = &d.right * d.right.transpose();
        // Spectral norm of the projector difference is the sine of the
        // largest principal angle.
        let sine = (proj_v - proj_h).singular_values().max();
        assert!(sine <= 1e-8, "seed {seed}: {sine:e}");
    }
}

#[test]
fn oracle_singular_vectors_match_population() {
    let m = model(150, 4, 2, 31);
    let est = estimate_oracle(&m, 0.1, &EstimateOptions::default()).unwrap();
    let diag = singular_diagnostics(est.decomposition.as_ref().unwrap(), &m).unwrap();
    assert!(diag.h1_max_error <= 1e-8);
    assert!(diag.h_rest_max_row_error <= 1e-8);
    assert_eq!(diag.omega, 1.0);
}

#[test]
fn procrustes_recovers_a_planted_rotation() {
    let m = model(100, 4, 2, 8);
    let q = oracle_scaled_matrix(&m).unwrap();
    let d = top_r_svd(&q, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
    let rot = a.qr().q();
    let mut rotated = d.clone();
    let rest = d.right.columns(1, 3) * &rot;
    rotated.right.columns_mut(1, 3).copy_from(&rest);
    let diag = compare_decompositions(&rotated, &d).unwrap();
    // rotated * Omega = original requires Omega = rot^T.
    assert!((&diag.rotation - rot.transpose()).amax() <= 1e-10);
    assert!(diag.h_rest_max_row_error <= 1e-10);
}

#[test]
fn randomized_svd_agrees_with_dense_on_oracle_input() {
    let m = model(300, 5, 2, 77);
    let q = oracle_scaled_matrix(&m).unwrap();
    let dense = decompose(q.matrix(), 5, SvdMethod::Dense).unwrap();
    let rand = decompose(q.matrix(), 5, SvdMethod::Randomized { oversample: 10, max_iter: 300, seed: 1 }).unwrap();
    check_spectral_invariants(&dense, q.matrix());
    check_spectral_invariants(&rand, q.matrix());
    for (a, b) in dense.sigma.iter().zip(&rand.sigma) {
        assert!((a - b).abs() <= 1e-10 * dense.sigma[0]);
    }
}

#[test]
fn quantized_population_counts_give_accurate_low_rank_p() {
    let m = model(100, 4, 3, 12);
    let pi = pi_of(&m);
    let p = m.transition_matrix().unwrap();
    let counts = DMatrix::from_fn(100, 100, |i, j| (1e9 * pi[i] * p.matrix()[(i, j)]).round() as u64);
    let counts = TransitionCounts::from_matrix(counts).unwrap();
    let c = compare_p_estimators(&counts, &m, 4, &EstimateOptions::default()).unwrap();
    assert!(c.tv_lowrank <= 1e-3, "{}", c.tv_lowrank);
    assert!(c.tv_empirical <= 1e-3);
}
