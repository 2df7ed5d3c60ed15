//! SCORE normalization, simplex vertex hunting and barycentric weights.
//!
//! Dividing each row of the right singular vectors by its leading entry
//! turns the simplicial cone spanned by the rows into a simplex in
//! `R^{r-1}`; anchor states sit exactly on its vertices. Vertex hunting
//! recovers the vertices, and each state's barycentric weights with respect
//! to them carry its disaggregation mass up to a per-column scale.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::kmeans::kmeans;
use crate::spectral::SpectralDecomposition;

/// Default floor factor: rows with `|h_1(j)| < 1e-3 * median |h_1|` are
/// treated as invalid.
pub const DEFAULT_FLOOR_FACTOR: f64 = 1e-3;
/// Fraction of invalid rows above which normalization fails.
pub const MAX_INVALID_FRACTION: f64 = 0.2;
/// SPA stops when the largest residual norm drops below this.
pub const SPA_COLLAPSE_TOL: f64 = 1e-12;
/// Ridge added to the Gram matrix of the weight solve.
pub const WEIGHT_RIDGE: f64 = 1e-12;
/// `|det [1 | B]| <= AFFINE_TOL * scale` marks degenerate vertices.
pub const AFFINE_TOL: f64 = 1e-12;

/// Rows of `[diag(h_1)]^{-1} [h_2, ..., h_r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEmbedding {
    /// `p x (r - 1)`; invalid rows are zero.
    pub rows: DMatrix<f64>,
    pub valid: Vec<bool>,
    pub floor: f64,
}

impl ScoreEmbedding {
    pub fn p(&self) -> usize {
        self.rows.nrows()
    }

    pub fn r(&self) -> usize {
        self.rows.ncols() + 1
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.valid[j]).collect()
    }

    pub fn invalid_indices(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| !self.valid[j]).collect()
    }

    /// Builds an embedding straight from points (all rows valid).
    pub fn from_points(rows: DMatrix<f64>) -> Self {
        let valid = vec![true; rows.nrows()];
        Self { rows, valid, floor: 0.0 }
    }
}

/// `factor * median_j |h_1(j)|`.
pub fn default_floor(d: &SpectralDecomposition, factor: f64) -> f64 {
    let mut abs: Vec<f64> = d.right.column(0).iter().map(|x| x.abs()).collect();
    factor * crate::linalg::median(&mut abs)
}

/// SCORE-normalizes the singular vectors. Rows with `|h_1(j)| < floor` (or
/// `h_1(j) == 0`) are flagged invalid and left as zeros.
pub fn score_normalize(d: &SpectralDecomposition, floor: f64) -> Result<ScoreEmbedding> {
    let r = d.r();
    if r < 2 {
        return Err(invalid("SCORE normalization needs r >= 2"));
    }
    if !(floor >= 0.0) {
        return Err(invalid("floor must be nonnegative"));
    }
    let p = d.right.nrows();
    let mut rows = DMatrix::zeros(p, r - 1);
    let mut valid = vec![false; p];
    for j in 0..p {
        let lead = d.right[(j, 0)];
        if lead.abs() < floor || lead == 0.0 {
            continue;
        }
        let row: Vec<f64> = (1..r).map(|k| d.right[(j, k)] / lead).collect();
        if row.iter().all(|x| x.is_finite()) {
            for (k, x) in row.into_iter().enumerate() {
                rows[(j, k)] = x;
            }
            valid[j] = true;
        }
    }
    let bad = valid.iter().filter(|v| !**v).count();
    if bad as f64 > MAX_INVALID_FRACTION * p as f64 {
        return Err(Error::TooManyInvalid { invalid: bad, total: p });
    }
    Ok(ScoreEmbedding { rows, valid, floor })
}

/// Estimated simplex vertices, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVertices {
    /// `r x (r - 1)`.
    pub vertices: DMatrix<f64>,
    /// Rows of the embedding picked as vertices, in pick order (SPA only).
    pub source_indices: Option<Vec<usize>>,
}

impl SimplexVertices {
    pub fn r(&self) -> usize {
        self.vertices.nrows()
    }

    /// Same vertices listed in a different order: new vertex `k` is old
    /// vertex `order[k]`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let vertices = DMatrix::from_fn(self.r(), self.vertices.ncols(), |k, d| self.vertices[(order[k], d)]);
        let source_indices = self.source_indices.as_ref().map(|s| order.iter().map(|&k| s[k]).collect());
        Self { vertices, source_indices }
    }
}

/// Successive projection on homogeneous rows `(1, x_j)`.
///
/// Repeatedly picks the row with the largest residual norm (lowest index on
/// ties) and projects every residual onto the orthogonal complement of the
/// pick. Returns positions into `candidates`.
pub fn successive_projection(points: &DMatrix<f64>, candidates: &[usize], r: usize) -> Result<Vec<usize>> {
    let dim = points.ncols() + 1;
    if candidates.len() < r {
        return Err(Error::DegenerateData { picked: 0, wanted: r });
    }
    let mut residual: Vec<DVector<f64>> = candidates
        .iter()
        .map(|&j| DVector::from_fn(dim, |d, _| if d == 0 { 1.0 } else { points[(j, d - 1)] }))
        .collect();
    let scale = residual.iter().map(|x| x.norm()).fold(1.0, f64::max);
    let mut picks = Vec::with_capacity(r);
    for step in 0..r {
        let mut best = 0;
        let mut best_norm = -1.0;
        for (a, x) in residual.iter().enumerate() {
            let nrm = x.norm_squared();
            if nrm > best_norm {
                best_norm = nrm;
                best = a;
            }
        }
        if best_norm.sqrt() <= SPA_COLLAPSE_TOL * scale {
            return Err(Error::DegenerateData { picked: step, wanted: r });
        }
        picks.push(best);
        let dir = &residual[best] / best_norm.sqrt();
        for x in residual.iter_mut() {
            let c = x.dot(&dir);
            x.axpy(-c, &dir, 1.0);
        }
    }
    Ok(picks)
}

/// Vertex hunting by successive projection over the valid rows.
pub fn hunt_vertices_spa(e: &ScoreEmbedding, r: usize) -> Result<SimplexVertices> {
    check_r(e, r)?;
    let valid = e.valid_indices();
    let picks = successive_projection(&e.rows, &valid, r)?;
    let source: Vec<usize> = picks.iter().map(|&a| valid[a]).collect();
    let vertices = DMatrix::from_fn(r, r - 1, |k, d| e.rows[(source[k], d)]);
    Ok(SimplexVertices { vertices, source_indices: Some(source) })
}

/// k-means restarts and Lloyd iterations used by the clustered hunter.
pub const CLUSTER_RESTARTS: usize = 5;
pub const CLUSTER_MAX_ITER: usize = 100;

/// Vertex hunting on `clusters` k-means centers of the valid rows, followed
/// by successive projection over the centers.
pub fn hunt_vertices_cluster_sp(e: &ScoreEmbedding, r: usize, clusters: usize, seed: u64) -> Result<SimplexVertices> {
    check_r(e, r)?;
    if clusters < r {
        return Err(invalid("number of clusters must be >= r"));
    }
    let valid = e.valid_indices();
    if valid.len() < clusters {
        return Err(Error::DegenerateData { picked: 0, wanted: r });
    }
    let points = DMatrix::from_fn(valid.len(), r - 1, |a, d| e.rows[(valid[a], d)]);
    let km = kmeans(&points, clusters, CLUSTER_MAX_ITER, CLUSTER_RESTARTS, seed);
    let all: Vec<usize> = (0..clusters).collect();
    let picks = successive_projection(&km.centers, &all, r)?;
    let vertices = DMatrix::from_fn(r, r - 1, |k, d| km.centers[(picks[k], d)]);
    Ok(SimplexVertices { vertices, source_indices: None })
}

fn check_r(e: &ScoreEmbedding, r: usize) -> Result<()> {
    if r < 2 || e.r() != r {
        return Err(invalid(alloc::format!("embedding has r = {}, requested r = {r}", e.r())));
    }
    Ok(())
}

/// Nonnegative per-state weights, each row summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    /// `p x r`.
    pub weights: DMatrix<f64>,
    /// Rows that received the uniform fallback (invalid embedding rows, or
    /// rows whose solution clipped to zero).
    pub fallback: Vec<usize>,
}

impl WeightMatrix {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        for i in 0..weights.nrows() {
            let row = weights.row(i);
            if row.iter().any(|x| !(x >= &0.0)) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(invalid(alloc::format!("row {i} of W is not a probability vector")));
            }
        }
        Ok(Self { weights, fallback: Vec::new() })
    }

    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    pub fn r(&self) -> usize {
        self.weights.ncols()
    }
}

/// Checks `|det [1 | B]|` against the Hadamard bound of its rows.
pub fn affinely_independent(v: &SimplexVertices) -> bool {
    let r = v.r();
    let aug = DMatrix::from_fn(r, r, |k, d| if d == 0 { 1.0 } else { v.vertices[(k, d - 1)] });
    let scale: f64 = aug.row_iter().map(|row| row.norm()).product();
    let det = aug.clone().lu().determinant();
    det.is_finite() && det.abs() > AFFINE_TOL * scale
}

/// Barycentric weights of every embedded row.
///
/// For each valid row `d_j`, minimizes
/// `||d_j - sum_k q_k b_k||^2 + (1 - sum_k q_k)^2` via ridge-stabilized
/// normal equations, clips negatives to zero and rescales to unit L1.
/// Invalid rows get uniform weights and are listed in `fallback`.
pub fn solve_weights(e: &ScoreEmbedding, v: &SimplexVertices) -> Result<WeightMatrix> {
    let r = v.r();
    if e.r() != r || v.vertices.ncols() != r - 1 {
        return Err(Error::DimensionMismatch { expected: r, found: e.r() });
    }
    if !affinely_independent(v) {
        return Err(Error::SingularSystem);
    }
    // A = [B^T; 1^T] is r x r; rows 0..r-1 are coordinates, row r-1 the ones.
    let a = DMatrix::from_fn(r, r, |row, k| if row + 1 == r { 1.0 } else { v.vertices[(k, row)] });
    let mut gram = a.tr_mul(&a);
    for k in 0..r {
        gram[(k, k)] += WEIGHT_RIDGE;
    }
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;

    let p = e.p();
    let mut weights = DMatrix::zeros(p, r);
    let mut fallback = Vec::new();
    let mut row = vec![0.0; r];
    for j in 0..p {
        let ok = e.valid[j] && {
            let target = DVector::from_fn(r, |d, _| if d + 1 == r { 1.0 } else { e.rows[(j, d)] });
            let q = chol.solve(&a.tr_mul(&target));
            row.copy_from_slice(q.as_slice());
            crate::linalg::clip_renormalize(&mut row)
        };
        if !ok {
            row.iter_mut().for_each(|x| *x = 1.0 / r as f64);
            fallback.push(j);
        }
        for k in 0..r {
            weights[(j, k)] = row[k];
        }
    }
    Ok(WeightMatrix { weights, fallback })
}
