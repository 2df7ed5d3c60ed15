//! Lloyd's k-means with k-means++ seeding, used by the clustered vertex
//! hunter.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x dim`, one center per row.
    pub centers: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|d| {
        let x = points[(i, d)] - centers[(c, d)];
        x * x
    }).sum()
}

fn seed_centers(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let (n, dim) = points.shape();
    let mut centers = DMatrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if target < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&points.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points, i, &centers, c));
        }
    }
    centers
}

fn lloyd(points: &DMatrix<f64>, mut centers: DMatrix<f64>, max_iter: usize) -> KMeans {
    let (n, dim) = points.shape();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(points, i, &centers, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            sizes[labels[i]] += 1;
            for d in 0..dim {
                sums[(labels[i], d)] += points[(i, d)];
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if sizes[c] > 0 {
                for d in 0..dim {
                    centers[(c, d)] = sums[(c, d)] / sizes[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points, i, &centers, labels[i])).sum();
    KMeans { centers, labels, inertia }
}

/// Best of `restarts` k-means runs by inertia. Points are rows of `points`.
pub fn kmeans(points: &DMatrix<f64>, k: usize, max_iter: usize, restarts: usize, seed: u64) -> KMeans {
    assert!(k >= 1 && k <= points.nrows(), "k must be in 1..=n");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let init = seed_centers(points, k, &mut rng);
        let run = lloyd(points, init, max_iter);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_well_spaced_blobs() {
        let mut data = Vec::new();
        for &(cx, cy) in &[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)] {
            for t in 0..10 {
                let e = (t as f64) * 0.01;
                data.extend_from_slice(&[cx + e, cy - e]);
            }
        }
        let pts = DMatrix::from_row_slice(30, 2, &data);
        let km = kmeans(&pts, 3, 100, 5, 1);
        for blob in 0..3 {
            let l = km.labels[blob * 10];
            assert!(km.labels[blob * 10..blob * 10 + 10].iter().all(|&x| x == l));
        }
        assert!(km.inertia < 0.1);
    }

    #[test]
    fn duplicate_points_become_exact_centers() {
        let pts = DMatrix::from_row_slice(6, 1, &[1.0, 1.0, 5.0, 5.0, 9.0, 9.0]);
        let km = kmeans(&pts, 3, 100, 5, 7);
        let mut c: Vec<f64> = km.centers.iter().copied().collect();
        c.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(c, vec![1.0, 5.0, 9.0]);
        assert_eq!(km.inertia, 0.0);
    }
}
