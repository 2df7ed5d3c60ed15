//! End-to-end estimation of `(U, V)` and the anchor set from transition
//! counts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result, Stage};
use crate::linalg::{hash_indices, hash_matrix, project_rows_to_simplex};
use crate::markov::{empirical_transition_matrix, TransitionCounts, TransitionMatrix};
use crate::model::SoftAggregationModel;
use crate::score::{
    default_floor, hunt_vertices_cluster_sp, hunt_vertices_spa, score_normalize, solve_weights, WeightMatrix,
    DEFAULT_FLOOR_FACTOR,
};
use crate::spectral::{oracle_scaled_matrix, scale_counts, scale_real_counts, top_r_svd_with, ScaledCountMatrix,
    SpectralDecomposition, SvdMethod};

/// Default anchor threshold.
pub const DEFAULT_DELTA0: f64 = 0.1;
/// Condition number of `V^T V` above which a ridge is added.
pub const GRAM_COND_LIMIT: f64 = 1e12;

/// What to do with states that were never entered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroMassPolicy {
    /// Fail with [`Error::ZeroColumn`] / [`Error::EmptyRow`].
    Error,
    /// Remove states with zero in- or out-count before estimation; they get
    /// zero disaggregation mass and uniform placeholder rows elsewhere.
    Drop,
    /// Add a constant to every count.
    Smooth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hunter {
    Spa,
    /// k-means with `clusters` centers (default `min(10 r, valid / 2)`),
    /// then successive projection over the centers.
    ClusterSp { clusters: Option<usize>, seed: u64 },
}

impl Hunter {
    pub fn name(&self) -> &'static str {
        match self {
            Hunter::Spa => "spa",
            Hunter::ClusterSp { .. } => "cluster-sp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub zero_mass: ZeroMassPolicy,
    pub hunter: Hunter,
    /// SCORE floor as a multiple of `median |h_1|`.
    pub floor_factor: f64,
    pub svd: SvdMethod,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            zero_mass: ZeroMassPolicy::Error,
            hunter: Hunter::Spa,
            floor_factor: DEFAULT_FLOOR_FACTOR,
            svd: SvdMethod::Auto,
        }
    }
}

/// Everything recorded about how an estimate was produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub sigma: Vec<f64>,
    pub rank_deficient: bool,
    pub hunter: Option<Hunter>,
    pub clusters: Option<usize>,
    pub spa_pick_order: Option<Vec<usize>>,
    /// `r x (r - 1)` hunted vertices.
    pub vertices: Option<DMatrix<f64>>,
    pub score_floor: f64,
    /// States whose embedding row was invalid (uniform fallback weights).
    pub invalid_rows: Vec<usize>,
    pub dropped_states: Vec<usize>,
    /// Negative entries clipped while assembling `V`.
    pub clipped_v_entries: usize,
    pub u_ridge_applied: bool,
    /// Rows of the projected `U` that clipped to zero and were set uniform.
    pub uniform_u_rows: Vec<usize>,
    pub oracle: bool,
    pub stage_hashes: Vec<(Stage, String)>,
}

/// Output of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationEstimate {
    pub p: usize,
    pub r: usize,
    /// `p x r`, columns are probability vectors.
    pub v_hat: DMatrix<f64>,
    /// Raw least-squares `P_hat V (V^T V)^{-1}`; rows need not be in the simplex.
    pub u_hat: DMatrix<f64>,
    /// `u_hat` with each row clipped and renormalized.
    pub u_hat_projected: DMatrix<f64>,
    pub weights: WeightMatrix,
    /// Sorted anchor states.
    pub anchors: Vec<usize>,
    pub delta0: f64,
    /// Spectral decomposition over the kept states (absent for `r = 1`).
    pub decomposition: Option<SpectralDecomposition>,
    pub provenance: Provenance,
}

impl AggregationEstimate {
    /// Reassembles an estimate from stored matrices.
    pub fn from_parts(
        v_hat: DMatrix<f64>,
        u_hat: DMatrix<f64>,
        weights: DMatrix<f64>,
        anchors: Vec<usize>,
        delta0: f64,
    ) -> Result<Self> {
        let (p, r) = v_hat.shape();
        if u_hat.shape() != (p, r) {
            return Err(Error::DimensionMismatch { expected: p, found: u_hat.nrows() });
        }
        if weights.shape() != (p, r) {
            return Err(Error::DimensionMismatch { expected: p, found: weights.nrows() });
        }
        if let Some(&bad) = anchors.iter().find(|&&j| j >= p) {
            return Err(Error::StateOutOfRange { state: bad, p });
        }
        let mut u_hat_projected = u_hat.clone();
        let uniform_u_rows = project_rows_to_simplex(&mut u_hat_projected);
        let weights = WeightMatrix::new(weights)?;
        Ok(Self {
            p,
            r,
            v_hat,
            u_hat,
            u_hat_projected,
            weights,
            anchors,
            delta0,
            decomposition: None,
            provenance: Provenance { uniform_u_rows, ..Provenance::default() },
        })
    }
}

/// `V_hat = column-normalize(diag(h_1) diag(m)^{1/2} W)`.
///
/// Negative products (from negative `h_1` entries) are clipped to zero
/// before normalizing; the number clipped is returned alongside.
pub fn assemble_v(w: &WeightMatrix, h1: &DVector<f64>, mass: &DVector<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (p, r) = w.weights.shape();
    if h1.len() != p || mass.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: h1.len().min(mass.len()) });
    }
    let mut v = DMatrix::zeros(p, r);
    let mut clipped = 0;
    for j in 0..p {
        let scale = h1[j] * mass[j].max(0.0).sqrt();
        for k in 0..r {
            let x = scale * w.weights[(j, k)];
            if x < 0.0 {
                clipped += 1;
            } else {
                v[(j, k)] = x;
            }
        }
    }
    for k in 0..r {
        let s = v.column(k).sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::EmptyVColumn(k));
        }
        v.column_mut(k).scale_mut(1.0 / s);
    }
    Ok((v, clipped))
}

/// Least-squares aggregation estimate and its simplex projection.
#[derive(Debug, Clone, PartialEq)]
pub struct URecovery {
    pub raw: DMatrix<f64>,
    pub projected: DMatrix<f64>,
    pub ridge_applied: bool,
    pub uniform_rows: Vec<usize>,
}

/// `U_hat = P_hat V (V^T V)^{-1}`.
pub fn recover_u(p_hat: &TransitionMatrix, v_hat: &DMatrix<f64>) -> Result<URecovery> {
    let p = p_hat.p();
    if v_hat.nrows() != p {
        return Err(Error::DimensionMismatch { expected: p, found: v_hat.nrows() });
    }
    let r = v_hat.ncols();
    let mut gram = v_hat.tr_mul(v_hat);
    let ev = crate::linalg::symmetric_eigenvalues(&gram);
    let (lo, hi) = (ev[0], ev[r - 1]);
    let ridge_applied = !(lo > 0.0) || hi / lo > GRAM_COND_LIMIT;
    if ridge_applied {
        let ridge = 1e-12 * gram.trace() / r as f64;
        for k in 0..r {
            gram[(k, k)] += ridge;
        }
    }
    let chol = gram.cholesky().ok_or(Error::SingularGram)?;
    // U^T = G^{-1} V^T P^T
    let rhs = v_hat.tr_mul(&p_hat.matrix().transpose());
    let raw = chol.solve(&rhs).transpose();
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularGram);
    }
    let mut projected = raw.clone();
    let uniform_rows = project_rows_to_simplex(&mut projected);
    Ok(URecovery { raw, projected, ridge_applied, uniform_rows })
}

/// `{ j : max_k W[j, k] >= 1 - delta0 }`, sorted.
pub fn detect_anchors(w: &WeightMatrix, delta0: f64) -> Result<Vec<usize>> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(invalid("delta0 must lie in (0, 1)"));
    }
    let cut = 1.0 - delta0;
    Ok((0..w.p())
        .filter(|&j| w.weights.row(j).iter().any(|&x| x >= cut))
        .collect())
}

/// States to keep under [`ZeroMassPolicy::Drop`]: repeatedly removes states
/// with zero column mass or zero row sum in the restricted counts.
fn states_to_keep(c: &TransitionCounts) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..c.p()).collect();
    loop {
        let n = c.counts();
        let next: Vec<usize> = keep
            .iter()
            .copied()
            .filter(|&a| {
                let into: u64 = keep.iter().map(|&i| n[(i, a)]).sum();
                let out: u64 = keep.iter().map(|&j| n[(a, j)]).sum();
                into > 0 && out > 0
            })
            .collect();
        if next.len() == keep.len() {
            return keep;
        }
        keep = next;
    }
}

/// Full estimator on observed counts.
pub fn estimate(counts: &TransitionCounts, r: usize, delta0: f64, options: &EstimateOptions) -> Result<AggregationEstimate> {
    check_delta0(delta0)?;
    let p = counts.p();
    if r == 0 || r > p {
        return Err(invalid(alloc::format!("need 1 <= r <= p = {p}, got r = {r}")));
    }
    match options.zero_mass {
        ZeroMassPolicy::Error => {
            let scaled = scale_counts(counts).map_err(|e| e.at(Stage::Scale))?;
            let p_hat = empirical_transition_matrix(counts, 0.0).map_err(|e| e.at(Stage::Counts))?;
            estimate_scaled(&scaled, &p_hat, r, delta0, options)
        }
        ZeroMassPolicy::Smooth(s) => {
            if !(s > 0.0) || !s.is_finite() {
                if s == 0.0 {
                    let plain = EstimateOptions { zero_mass: ZeroMassPolicy::Error, ..*options };
                    return estimate(counts, r, delta0, &plain);
                }
                return Err(invalid("smoothing must be a finite nonnegative number"));
            }
            let smoothed = counts.to_f64().add_scalar(s);
            let scaled = scale_real_counts(&smoothed).map_err(|e| e.at(Stage::Scale))?;
            let p_hat = empirical_transition_matrix(counts, s).map_err(|e| e.at(Stage::Counts))?;
            estimate_scaled(&scaled, &p_hat, r, delta0, options)
        }
        ZeroMassPolicy::Drop => {
            let keep = states_to_keep(counts);
            if keep.len() == p {
                let plain = EstimateOptions { zero_mass: ZeroMassPolicy::Error, ..*options };
                return estimate(counts, r, delta0, &plain);
            }
            if keep.len() < r.max(1) {
                return Err(invalid(alloc::format!(
                    "only {} states remain after dropping unvisited ones; need at least r = {r}",
                    keep.len()
                ))
                .at(Stage::Counts));
            }
            let reduced = counts.restrict(&keep).map_err(|e| e.at(Stage::Counts))?;
            let scaled = scale_counts(&reduced).map_err(|e| e.at(Stage::Scale))?;
            let p_hat = empirical_transition_matrix(&reduced, 0.0).map_err(|e| e.at(Stage::Counts))?;
            let inner = estimate_scaled(&scaled, &p_hat, r, delta0, options)?;
            Ok(expand(inner, &keep, p))
        }
    }
}

/// Noiseless mode: runs the pipeline on `diag(pi) P diag(pi)^{-1/2}` with
/// the true `P` standing in for the empirical transition matrix.
pub fn estimate_oracle(model: &SoftAggregationModel, delta0: f64, options: &EstimateOptions) -> Result<AggregationEstimate> {
    let scaled = oracle_scaled_matrix(model).map_err(|e| e.at(Stage::Scale))?;
    let p_true = model.transition_matrix().map_err(|e| e.at(Stage::Counts))?;
    let mut est = estimate_scaled(&scaled, &p_true, model.r(), delta0, options)?;
    est.provenance.oracle = true;
    Ok(est)
}

fn check_delta0(delta0: f64) -> Result<()> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(invalid("delta0 must lie in (0, 1)"));
    }
    Ok(())
}

/// Pipeline on an already scaled matrix and a transition-matrix estimate.
pub fn estimate_scaled(
    scaled: &ScaledCountMatrix,
    p_hat: &TransitionMatrix,
    r: usize,
    delta0: f64,
    options: &EstimateOptions,
) -> Result<AggregationEstimate> {
    check_delta0(delta0)?;
    let p = scaled.p();
    if p_hat.p() != p {
        return Err(Error::DimensionMismatch { expected: p, found: p_hat.p() });
    }
    if r == 0 || r > p {
        return Err(invalid(alloc::format!("need 1 <= r <= p = {p}, got r = {r}")));
    }
    let mut prov = Provenance::default();
    prov.stage_hashes.push((Stage::Scale, hash_matrix(scaled.matrix())));

    if r == 1 {
        let mass = scaled.column_mass();
        let v_hat = DMatrix::from_fn(p, 1, |j, _| mass[j] / mass.sum());
        let ones = DMatrix::from_element(p, 1, 1.0);
        let weights = WeightMatrix { weights: ones.clone(), fallback: Vec::new() };
        let anchors: Vec<usize> = (0..p).collect();
        prov.stage_hashes.push((Stage::AssembleV, hash_matrix(&v_hat)));
        prov.stage_hashes.push((Stage::RecoverU, hash_matrix(&ones)));
        prov.stage_hashes.push((Stage::Anchors, hash_indices(&anchors)));
        return Ok(AggregationEstimate {
            p,
            r,
            v_hat,
            u_hat: ones.clone(),
            u_hat_projected: ones,
            weights,
            anchors,
            delta0,
            decomposition: None,
            provenance: prov,
        });
    }

    let decomposition = top_r_svd_with(scaled, r, options.svd).map_err(|e| e.at(Stage::Svd))?;
    prov.sigma = decomposition.sigma.clone();
    prov.rank_deficient = decomposition.rank_deficient;
    prov.stage_hashes.push((Stage::Svd, hash_matrix(&decomposition.right)));

    let floor = default_floor(&decomposition, options.floor_factor);
    prov.score_floor = floor;
    let embedding = score_normalize(&decomposition, floor).map_err(|e| e.at(Stage::Score))?;
    prov.invalid_rows = embedding.invalid_indices();
    prov.stage_hashes.push((Stage::Score, hash_matrix(&embedding.rows)));

    prov.hunter = Some(options.hunter);
    let vertices = match options.hunter {
        Hunter::Spa => hunt_vertices_spa(&embedding, r),
        Hunter::ClusterSp { clusters, seed } => {
            let valid = embedding.valid_indices().len();
            let l = clusters.unwrap_or_else(|| (10 * r).min(valid / 2)).max(r);
            prov.clusters = Some(l);
            hunt_vertices_cluster_sp(&embedding, r, l, seed)
        }
    }
    .map_err(|e| e.at(Stage::VertexHunting))?;
    prov.spa_pick_order = vertices.source_indices.clone();
    prov.stage_hashes.push((Stage::VertexHunting, hash_matrix(&vertices.vertices)));
    prov.vertices = Some(vertices.vertices.clone());

    let weights = solve_weights(&embedding, &vertices).map_err(|e| e.at(Stage::Weights))?;
    prov.stage_hashes.push((Stage::Weights, hash_matrix(&weights.weights)));

    let (v_hat, clipped) =
        assemble_v(&weights, &decomposition.h1(), scaled.column_mass()).map_err(|e| e.at(Stage::AssembleV))?;
    prov.clipped_v_entries = clipped;
    prov.stage_hashes.push((Stage::AssembleV, hash_matrix(&v_hat)));

    let u = recover_u(p_hat, &v_hat).map_err(|e| e.at(Stage::RecoverU))?;
    prov.u_ridge_applied = u.ridge_applied;
    prov.uniform_u_rows = u.uniform_rows;
    prov.stage_hashes.push((Stage::RecoverU, hash_matrix(&u.raw)));

    let anchors = detect_anchors(&weights, delta0).map_err(|e| e.at(Stage::Anchors))?;
    prov.stage_hashes.push((Stage::Anchors, hash_indices(&anchors)));

    Ok(AggregationEstimate {
        p,
        r,
        v_hat,
        u_hat: u.raw,
        u_hat_projected: u.projected,
        weights,
        anchors,
        delta0,
        decomposition: Some(decomposition),
        provenance: prov,
    })
}

/// Lifts an estimate on `keep` back to all `p` states.
fn expand(inner: AggregationEstimate, keep: &[usize], p: usize) -> AggregationEstimate {
    let r = inner.r;
    let uniform = 1.0 / r as f64;
    let mut v_hat = DMatrix::zeros(p, r);
    let mut u_hat = DMatrix::from_element(p, r, uniform);
    let mut u_proj = DMatrix::from_element(p, r, uniform);
    let mut w = DMatrix::from_element(p, r, uniform);
    for (a, &j) in keep.iter().enumerate() {
        for k in 0..r {
            v_hat[(j, k)] = inner.v_hat[(a, k)];
            u_hat[(j, k)] = inner.u_hat[(a, k)];
            u_proj[(j, k)] = inner.u_hat_projected[(a, k)];
            w[(j, k)] = inner.weights.weights[(a, k)];
        }
    }
    let mut in_keep = vec![false; p];
    keep.iter().for_each(|&j| in_keep[j] = true);
    let dropped: Vec<usize> = (0..p).filter(|&j| !in_keep[j]).collect();

    let mut fallback: Vec<usize> = inner.weights.fallback.iter().map(|&a| keep[a]).collect();
    fallback.extend(dropped.iter().copied());
    fallback.sort_unstable();
    let mut prov = inner.provenance;
    prov.invalid_rows = prov.invalid_rows.iter().map(|&a| keep[a]).collect();
    prov.uniform_u_rows = prov.uniform_u_rows.iter().map(|&a| keep[a]).collect();
    prov.spa_pick_order = prov.spa_pick_order.map(|v| v.iter().map(|&a| keep[a]).collect());
    prov.dropped_states = dropped;
    AggregationEstimate {
        p,
        r,
        v_hat,
        u_hat,
        u_hat_projected: u_proj,
        weights: WeightMatrix { weights: w, fallback },
        anchors: inner.anchors.iter().map(|&a| keep[a]).collect(),
        delta0: inner.delta0,
        decomposition: inner.decomposition,
        provenance: prov,
    }
}
