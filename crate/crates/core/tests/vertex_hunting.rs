use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softagg_core::score::{
    affinely_independent, hunt_vertices_cluster_sp, hunt_vertices_spa, solve_weights, ScoreEmbedding,
    SimplexVertices,
};

/// Random barycentric weights with every entry at least `min`.
fn interior_weights(rng: &mut ChaCha8Rng, r: usize, min: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..r).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| min + (1.0 - r as f64 * min) * x / s).collect()
}

/// Vertices whose augmented matrix `[1 | B]` has smallest singular value
/// at least 0.2, so no vertex is close to the hull of the others.
fn random_vertices(rng: &mut ChaCha8Rng, r: usize) -> DMatrix<f64> {
    loop {
        let b = DMatrix::from_fn(r, r - 1, |_, _| 4.0 * rng.random::<f64>() - 2.0);
        let aug = DMatrix::from_fn(r, r, |k, d| if d == 0 { 1.0 } else { b[(k, d - 1)] });
        let v = SimplexVertices { vertices: b.clone(), source_indices: None };
        if affinely_independent(&v) && aug.singular_values().min() >= 0.2 {
            return b;
        }
    }
}

/// Rows: `interior` convex combinations plus every vertex once, shuffled.
/// Returns the data and the row index of each vertex.
fn separable_data(rng: &mut ChaCha8Rng, b: &DMatrix<f64>, interior: usize) -> (DMatrix<f64>, Vec<usize>) {
    let r = b.nrows();
    let total = interior + r;
    let mut order: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut rows = DMatrix::zeros(total, r - 1);
    let mut vertex_rows = vec![0; r];
    for (slot, &src) in order.iter().enumerate() {
        if src < r {
            rows.row_mut(slot).copy_from(&b.row(src));
            vertex_rows[src] = slot;
        } else {
            let w = interior_weights(rng, r, 0.01);
            let x = DMatrix::from_row_slice(1, r, &w) * b;
            rows.row_mut(slot).copy_from(&x);
        }
    }
    (rows, vertex_rows)
}

fn same_vertex_set(found: &DMatrix<f64>, truth: &DMatrix<f64>, tol: f64) -> bool {
    let r = truth.nrows();
    let mut used = vec![false; r];
    (0..r).all(|i| {
        let hit = (0..r).find(|&k| !used[k] && (found.row(i) - truth.row(k)).amax() <= tol);
        hit.map(|k| used[k] = true).is_some()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn spa_returns_the_vertex_rows(r in 2usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_vertices(&mut rng, r);
        let (rows, vertex_rows) = separable_data(&mut rng, &b, 200);
        let found = hunt_vertices_spa(&ScoreEmbedding::from_points(rows), r).unwrap();
        let mut picked = found.source_indices.clone().unwrap();
        picked.sort_unstable();
        let mut expected = vertex_rows.clone();
        expected.sort_unstable();
        prop_assert_eq!(picked, expected);
        prop_assert!(same_vertex_set(&found.vertices, &b, 1e-10));
    }

    #[test]
    fn weights_are_probability_vectors(r in 2usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_vertices(&mut rng, r);
        // Points scattered around and beyond the simplex.
        let rows = DMatrix::from_fn(50, r - 1, |_, _| 6.0 * rng.random::<f64>() - 3.0);
        let v = SimplexVertices { vertices: b, source_indices: None };
        let w = solve_weights(&ScoreEmbedding::from_points(rows), &v).unwrap();
        for row in w.weights.row_iter() {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn interior_points_keep_their_weights(r in 2usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_vertices(&mut rng, r);
        let q: Vec<Vec<f64>> = (0..20).map(|_| interior_weights(&mut rng, r, 0.02)).collect();
        let qm = DMatrix::from_fn(20, r, |i, k| q[i][k]);
        let rows = &qm * &b;
        let v = SimplexVertices { vertices: b, source_indices: None };
        let w = solve_weights(&ScoreEmbedding::from_points(rows), &v).unwrap();
        let err = (&w.weights - &qm).amax();
        prop_assert!(err < 1e-9, "err {err:e} fallback {:?}", w.fallback);
        prop_assert!(w.fallback.is_empty());
    }
}

#[test]
fn triangle_with_fifty_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.2, 0.9]);
    let (rows, vertex_rows) = separable_data(&mut rng, &b, 50);
    let found = hunt_vertices_spa(&ScoreEmbedding::from_points(rows), 3).unwrap();
    let mut picked = found.source_indices.unwrap();
    picked.sort_unstable();
    let mut expected = vertex_rows;
    expected.sort_unstable();
    assert_eq!(picked, expected);
}

#[test]
fn cluster_hunter_matches_spa_on_repeated_vertices() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 3 + (seed as usize % 3);
        let b = random_vertices(&mut rng, r);
        // 15 copies of each vertex plus mixtures kept away from the corners.
        let copies = 15;
        let mixtures = 60;
        let mut rows = DMatrix::zeros(r * copies + mixtures, r - 1);
        for k in 0..r {
            for c in 0..copies {
                rows.row_mut(k * copies + c).copy_from(&b.row(k));
            }
        }
        for i in 0..mixtures {
            let w = interior_weights(&mut rng, r, 0.5 / r as f64);
            let x = DMatrix::from_row_slice(1, r, &w) * &b;
            rows.row_mut(r * copies + i).copy_from(&x);
        }
        let e = ScoreEmbedding::from_points(rows);
        let spa = hunt_vertices_spa(&e, r).unwrap();
        let csp = hunt_vertices_cluster_sp(&e, r, 5 * r, seed).unwrap();
        assert!(same_vertex_set(&csp.vertices, &spa.vertices, 1e-8), "seed {seed}\n{}\n{}", csp.vertices, spa.vertices);
    }
}
