//! Comparison of estimates against a known model: label alignment, L1
//! (total-variation, un-halved) errors, anchor precision/recall, rate fits
//! and singular-subspace diagnostics.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SVD};
// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::assignment::hungarian;
use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate, AggregationEstimate, EstimateOptions, DEFAULT_DELTA0};
use crate::linalg::{l1_distance, project_rows_to_simplex};
use crate::markov::TransitionCounts;
use crate::model::SoftAggregationModel;
use crate::spectral::{oracle_scaled_matrix, top_r_svd, SpectralDecomposition};

/// Errors after matching estimated meta-states to true ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedErrors {
    /// `permutation[k]` is the true meta-state matched to estimated `k`.
    pub permutation: Vec<usize>,
    /// `(1/r) sum_k ||V_hat_k - V_k||_1`
    pub tv_v_mean: f64,
    pub tv_v_max: f64,
    /// `(1/p) sum_j ||u_hat_j - u_j||_1` on the raw estimate.
    pub tv_u_mean: f64,
    pub tv_u_max: f64,
    /// Same on the simplex-projected estimate.
    pub tv_u_projected_mean: f64,
    /// Row-mean L1 error of the row-projected product `U_hat V_hat^T`.
    pub tv_p_mean: f64,
    /// Same for the raw product.
    pub tv_p_raw_mean: f64,
    pub anchor_precision_strict: f64,
    pub anchor_recall_strict: f64,
    pub anchor_precision_loose: f64,
    pub anchor_recall_loose: f64,
    /// Estimated anchor set equals the planted one, each with the right
    /// meta-state.
    pub anchors_exact_strict: bool,
}

/// `C[k][l] = ||V_hat_k - V_l||_1`.
pub fn alignment_cost(v_hat: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let r = v.ncols();
    DMatrix::from_fn(r, r, |k, l| l1_distance(v_hat.column(k).iter(), v.column(l).iter()))
}

/// Matches estimated columns to true ones by exact assignment on the
/// L1 cost between `V` columns, then scores `V`, `U`, `P` and anchors under
/// that single permutation.
pub fn align_and_score(est: &AggregationEstimate, truth: &SoftAggregationModel) -> Result<AlignedErrors> {
    let (p, r) = (truth.p(), truth.r());
    if est.p != p {
        return Err(Error::DimensionMismatch { expected: p, found: est.p });
    }
    if est.r != r {
        return Err(Error::DimensionMismatch { expected: r, found: est.r });
    }
    let perm = hungarian(&alignment_cost(&est.v_hat, truth.v()));

    let mut v_al = DMatrix::zeros(p, r);
    let mut u_al = DMatrix::zeros(p, r);
    let mut u_proj_al = DMatrix::zeros(p, r);
    for (k, &l) in perm.iter().enumerate() {
        v_al.set_column(l, &est.v_hat.column(k));
        u_al.set_column(l, &est.u_hat.column(k));
        u_proj_al.set_column(l, &est.u_hat_projected.column(k));
    }
    let col_err: Vec<f64> = (0..r).map(|l| l1_distance(v_al.column(l).iter(), truth.v().column(l).iter())).collect();
    let row_err: Vec<f64> = (0..p).map(|j| l1_distance(u_al.row(j).iter(), truth.u().row(j).iter())).collect();
    let proj_err: f64 =
        (0..p).map(|j| l1_distance(u_proj_al.row(j).iter(), truth.u().row(j).iter())).sum::<f64>() / p as f64;

    let p_true = truth.transition_matrix()?;
    let raw_product = &est.u_hat * est.v_hat.transpose();
    let mut product = raw_product.clone();
    project_rows_to_simplex(&mut product);
    let tv_p = crate::linalg::mean_row_l1(&product, p_true.matrix());
    let tv_p_raw = crate::linalg::mean_row_l1(&raw_product, p_true.matrix());

    let planted = truth.anchors();
    let mut strict_hits = 0usize;
    let mut loose_hits = 0usize;
    for &j in &est.anchors {
        let row = est.weights.weights.row(j);
        let mut k_hat = 0;
        for k in 1..r {
            if row[k] > row[k_hat] {
                k_hat = k;
            }
        }
        match truth.anchor_owner(j) {
            Some(owner) => {
                loose_hits += 1;
                if owner == perm[k_hat] {
                    strict_hits += 1;
                }
            }
            None => {}
        }
    }
    let ratio = |hits: usize, total: usize| if total == 0 { 1.0 } else { hits as f64 / total as f64 };
    let exact = strict_hits == planted.len() && est.anchors.len() == planted.len();

    Ok(AlignedErrors {
        permutation: perm,
        tv_v_mean: col_err.iter().sum::<f64>() / r as f64,
        tv_v_max: col_err.iter().copied().fold(0.0, f64::max),
        tv_u_mean: row_err.iter().sum::<f64>() / p as f64,
        tv_u_max: row_err.iter().copied().fold(0.0, f64::max),
        tv_u_projected_mean: proj_err,
        tv_p_mean: tv_p,
        tv_p_raw_mean: tv_p_raw,
        anchor_precision_strict: ratio(strict_hits, est.anchors.len()),
        anchor_recall_strict: ratio(strict_hits, planted.len()),
        anchor_precision_loose: ratio(loose_hits, est.anchors.len()),
        anchor_recall_loose: ratio(loose_hits, planted.len()),
        anchors_exact_strict: exact,
    })
}

/// Mean and spread of the error at one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub n: f64,
    pub mean_error: f64,
    pub std_error: f64,
}

/// Ordinary least squares of `ln(mean_error)` on `ln(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_rate(points: Vec<RatePoint>) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(invalid("rate fit needs at least 3 points"));
    }
    if points.iter().any(|pt| !(pt.mean_error > 0.0) || !(pt.n > 0.0)) {
        return Err(invalid("rate fit needs positive n and errors"));
    }
    let xs: Vec<f64> = points.iter().map(|pt| pt.n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|pt| pt.mean_error.ln()).collect();
    let m = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / m;
    let y_bar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("rate fit needs at least two distinct n"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    Ok(RateFit { points, slope, intercept: y_bar - slope * x_bar })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Row-wise singular-vector errors against the population decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularDiagnostics {
    /// Sign aligning the estimated leading vector with the true one.
    pub omega: f64,
    /// `max_j |omega h_hat_1(j) - h_1(j)|`
    pub h1_max_error: f64,
    /// Orthogonal `(r-1) x (r-1)` Procrustes alignment of `[h_2..h_r]`.
    pub rotation: DMatrix<f64>,
    /// `max_j ||e_j^T (H_hat Omega - H)||_2` over the trailing vectors.
    pub h_rest_max_row_error: f64,
    pub sigma_true: Vec<f64>,
}

/// Orthogonal `Omega` minimizing `||a Omega - b||_F`.
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.tr_mul(b);
    let svd = SVD::try_new(m, true, true, f64::EPSILON, 0).ok_or(Error::SingularSystem)?;
    let (u, v_t) = (svd.u.ok_or(Error::SingularSystem)?, svd.v_t.ok_or(Error::SingularSystem)?);
    Ok(u * v_t)
}

/// Compares an estimated decomposition with the one of the model's
/// population matrix. Informational only.
pub fn singular_diagnostics(est: &SpectralDecomposition, truth: &SoftAggregationModel) -> Result<SingularDiagnostics> {
    let r = est.r();
    if est.right.nrows() != truth.p() {
        return Err(Error::DimensionMismatch { expected: truth.p(), found: est.right.nrows() });
    }
    let pop = top_r_svd(&oracle_scaled_matrix(truth)?, r)?;
    compare_decompositions(est, &pop)
}

/// [`singular_diagnostics`] against an explicit reference decomposition.
pub fn compare_decompositions(est: &SpectralDecomposition, reference: &SpectralDecomposition) -> Result<SingularDiagnostics> {
    let r = est.r();
    if reference.r() != r || reference.right.nrows() != est.right.nrows() {
        return Err(Error::DimensionMismatch { expected: reference.right.nrows(), found: est.right.nrows() });
    }
    let p = est.right.nrows();
    let dot = est.right.column(0).dot(&reference.right.column(0));
    let omega = if dot >= 0.0 { 1.0 } else { -1.0 };
    let h1_max_error = (0..p)
        .map(|j| (omega * est.right[(j, 0)] - reference.right[(j, 0)]).abs())
        .fold(0.0, f64::max);
    let (rotation, rest_err) = if r >= 2 {
        let a = est.right.columns(1, r - 1).into_owned();
        let b = reference.right.columns(1, r - 1).into_owned();
        let rot = procrustes(&a, &b)?;
        let diff = a * &rot - b;
        let worst = diff.row_iter().map(|row| row.norm()).fold(0.0, f64::max);
        (rot, worst)
    } else {
        (DMatrix::zeros(0, 0), 0.0)
    };
    Ok(SingularDiagnostics {
        omega,
        h1_max_error,
        rotation,
        h_rest_max_row_error: rest_err,
        sigma_true: reference.sigma.clone(),
    })
}

/// Transition-matrix errors of the low-rank estimate and of the raw
/// empirical matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PComparison {
    /// Row-mean L1 error of the row-projected `U_hat V_hat^T`.
    pub tv_lowrank: f64,
    pub tv_lowrank_raw: f64,
    /// Row-mean L1 error of `P_hat = diag(N 1)^{-1} N`.
    pub tv_empirical: f64,
    /// Rows compared (states with at least one outgoing transition).
    pub rows_compared: usize,
}

/// Runs the estimator and compares both transition-matrix estimates.
pub fn compare_p_estimators(
    counts: &TransitionCounts,
    truth: &SoftAggregationModel,
    r: usize,
    options: &EstimateOptions,
) -> Result<PComparison> {
    let est = estimate(counts, r, DEFAULT_DELTA0, options)?;
    compare_p_with_estimate(&est, counts, truth)
}

/// As [`compare_p_estimators`] with an existing estimate.
pub fn compare_p_with_estimate(
    est: &AggregationEstimate,
    counts: &TransitionCounts,
    truth: &SoftAggregationModel,
) -> Result<PComparison> {
    let p = truth.p();
    if counts.p() != p || est.p != p {
        return Err(Error::DimensionMismatch { expected: p, found: counts.p() });
    }
    let p_true = truth.transition_matrix()?;
    let raw = &est.u_hat * est.v_hat.transpose();
    let mut projected = raw.clone();
    project_rows_to_simplex(&mut projected);
    let rows = counts.row_sums();
    let n = counts.counts();
    let (mut low, mut low_raw, mut emp, mut used) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..p {
        if rows[i] == 0 {
            continue;
        }
        used += 1;
        let truth_row = p_true.matrix().row(i);
        low += l1_distance(projected.row(i).iter(), truth_row.iter());
        low_raw += l1_distance(raw.row(i).iter(), truth_row.iter());
        emp += (0..p).map(|j| (n[(i, j)] as f64 / rows[i] as f64 - truth_row[j]).abs()).sum::<f64>();
    }
    if used == 0 {
        return Err(invalid("no state has outgoing transitions"));
    }
    let u = used as f64;
    Ok(PComparison { tv_lowrank: low / u, tv_lowrank_raw: low_raw / u, tv_empirical: emp / u, rows_compared: used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::WeightMatrix;
    use alloc::vec;

    fn truth() -> SoftAggregationModel {
        let u = DMatrix::from_row_slice(4, 2, &[0.7, 0.3, 0.2, 0.8, 0.5, 0.5, 0.1, 0.9]);
        let v = DMatrix::from_row_slice(4, 2, &[0.6, 0.0, 0.0, 0.5, 0.3, 0.2, 0.1, 0.3]);
        SoftAggregationModel::new(u, v, vec![vec![0], vec![1]]).unwrap()
    }

    fn perfect(m: &SoftAggregationModel, order: &[usize]) -> AggregationEstimate {
        let q = m.permute_meta_states(order).unwrap();
        let w = DMatrix::from_fn(m.p(), m.r(), |j, k| {
            let s: f64 = q.v().row(j).sum();
            q.v()[(j, k)] / s
        });
        AggregationEstimate::from_parts(q.v().clone(), q.u().clone(), w, vec![0, 1], 0.1).unwrap()
    }

    #[test]
    fn exact_estimate_scores_zero() {
        let m = truth();
        let e = align_and_score(&perfect(&m, &[0, 1]), &m).unwrap();
        assert_eq!(e.permutation, vec![0, 1]);
        assert_eq!(e.tv_v_mean, 0.0);
        assert_eq!(e.tv_u_mean, 0.0);
        assert!(e.tv_p_mean < 1e-15);
        assert_eq!(e.anchor_precision_strict, 1.0);
        assert_eq!(e.anchor_recall_strict, 1.0);
        assert!(e.anchors_exact_strict);
    }

    #[test]
    fn swapped_labels_are_undone() {
        let m = truth();
        let e = align_and_score(&perfect(&m, &[1, 0]), &m).unwrap();
        assert_eq!(e.permutation, vec![1, 0]);
        assert_eq!(e.tv_v_mean, 0.0);
        assert_eq!(e.tv_u_mean, 0.0);
        assert!(e.anchors_exact_strict);
    }

    #[test]
    fn wrong_meta_state_is_loose_but_not_strict() {
        let m = truth();
        let mut est = perfect(&m, &[0, 1]);
        // claim state 0 belongs to meta-state 1
        est.weights = WeightMatrix {
            weights: DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5]),
            fallback: vec![],
        };
        let e = align_and_score(&est, &m).unwrap();
        assert_eq!(e.anchor_precision_loose, 1.0);
        assert_eq!(e.anchor_precision_strict, 0.5);
        assert_eq!(e.anchor_recall_strict, 0.5);
        assert!(!e.anchors_exact_strict);
    }

    #[test]
    fn dimension_mismatch() {
        let m = truth();
        let est = AggregationEstimate::from_parts(
            DMatrix::from_element(3, 2, 1.0 / 3.0),
            DMatrix::from_element(3, 2, 0.5),
            DMatrix::from_element(3, 2, 0.5),
            vec![],
            0.1,
        )
        .unwrap();
        assert!(matches!(align_and_score(&est, &m), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn constant_errors_have_zero_slope() {
        let pts = [1e4, 1e5, 1e6].iter().map(|&n| RatePoint { n, mean_error: 0.3, std_error: 0.0 }).collect();
        let fit = fit_rate(pts).unwrap();
        assert_eq!(fit.slope, 0.0);
    }

    #[test]
    fn planted_inverse_root_rate() {
        let pts = [1e4, 3e4, 1e5, 3e5, 1e6]
            .iter()
            .map(|&n: &f64| RatePoint { n, mean_error: 2.0 / n.sqrt(), std_error: 0.0 })
            .collect();
        let fit = fit_rate(pts).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn rate_fit_preconditions() {
        let two = vec![RatePoint { n: 1.0, mean_error: 1.0, std_error: 0.0 }; 2];
        assert!(fit_rate(two).is_err());
        let zero = [1.0, 2.0, 3.0].iter().map(|&n| RatePoint { n, mean_error: 0.0, std_error: 0.0 }).collect();
        assert!(fit_rate(zero).is_err());
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
