//! Column-scaled count matrix and its leading singular triplets.
//!
//! The scaled matrix is `N diag(m)^{-1/2}` where `m = N^T 1` holds the
//! column masses. Its right singular vectors span the same space as the
//! disaggregation distributions (after a diagonal rescaling), which is what
//! the SCORE step exploits.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SVD};
// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::markov::{stationary_distribution, TransitionCounts, STATIONARY_MAX_ITER, STATIONARY_TOL};
use crate::model::SoftAggregationModel;

/// Largest `p` decomposed with a full dense SVD under [`SvdMethod::Auto`].
pub const DENSE_SVD_MAX_P: usize = 2500;
/// `sigma_r <= RANK_TOL * sigma_1` marks a rank-deficient decomposition.
pub const RANK_TOL: f64 = 1e-12;

/// `N diag(m)^{-1/2}` together with the column masses `m` and total count.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledCountMatrix {
    matrix: DMatrix<f64>,
    column_mass: DVector<f64>,
    total: f64,
}

impl ScaledCountMatrix {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_mass(&self) -> &DVector<f64> {
        &self.column_mass
    }

    /// Total number of transitions (1 for population matrices).
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Scales the columns of `N` by `1 / sqrt(m_j)`.
///
/// Fails with [`Error::ZeroColumn`] naming every state that was never
/// entered.
pub fn scale_counts(c: &TransitionCounts) -> Result<ScaledCountMatrix> {
    scale_real_counts(&c.to_f64())
}

/// [`scale_counts`] for a real-valued (e.g. smoothed) count matrix.
pub fn scale_real_counts(n: &DMatrix<f64>) -> Result<ScaledCountMatrix> {
    if n.nrows() != n.ncols() {
        return Err(Error::DimensionMismatch { expected: n.nrows(), found: n.ncols() });
    }
    if n.iter().any(|x| !(x >= &0.0) || !x.is_finite()) {
        return Err(invalid("counts must be finite and nonnegative"));
    }
    let mass: DVector<f64> = DVector::from_iterator(n.ncols(), n.column_iter().map(|c| c.sum()));
    let zero: Vec<usize> = (0..mass.len()).filter(|&j| !(mass[j] > 0.0)).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroColumn(zero));
    }
    let mut matrix = n.clone();
    for (j, mut col) in matrix.column_iter_mut().enumerate() {
        col /= mass[j].sqrt();
    }
    let total = mass.sum();
    Ok(ScaledCountMatrix { matrix, column_mass: mass, total })
}

/// `diag(pi) P diag(pi)^{-1/2}`.
pub(crate) fn population_scaled(p: &DMatrix<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| pi[i] * p[(i, j)] / pi[j].sqrt())
}

/// The noiseless counterpart of the scaled count matrix for a known model:
/// `Q = diag(pi) P diag(pi)^{-1/2}` with column masses `pi` and total 1.
pub fn oracle_scaled_matrix(model: &SoftAggregationModel) -> Result<ScaledCountMatrix> {
    let tm = model.transition_matrix()?;
    let pi = stationary_distribution(&tm, STATIONARY_TOL, STATIONARY_MAX_ITER)?.into_inner();
    let zero: Vec<usize> = (0..pi.len()).filter(|&j| !(pi[j] > 0.0)).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroColumn(zero));
    }
    let matrix = population_scaled(tm.matrix(), &pi);
    Ok(ScaledCountMatrix { matrix, column_mass: pi, total: 1.0 })
}

/// Leading `r` singular triplets, `sigma` nonincreasing.
///
/// Columns of `left` and `right` are `g_i` and `h_i`. Each pair is signed so
/// the largest-magnitude entry of `h_i` is positive (first index on ties),
/// and `h_1` additionally has a nonnegative entry sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub sigma: Vec<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub sign_fixed: bool,
    /// `sigma_r <= 1e-12 sigma_1`.
    pub rank_deficient: bool,
}

impl SpectralDecomposition {
    pub fn r(&self) -> usize {
        self.sigma.len()
    }

    /// Leading right singular vector `h_1`.
    pub fn h1(&self) -> DVector<f64> {
        self.right.column(0).into_owned()
    }

    /// Max entry of `|H^T H - I|` and `|G^T G - I|`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let r = self.r();
        let eye = DMatrix::<f64>::identity(r, r);
        (
            crate::linalg::max_abs_diff(&self.right.tr_mul(&self.right), &eye),
            crate::linalg::max_abs_diff(&self.left.tr_mul(&self.left), &eye),
        )
    }

    /// `max_i max(||M h_i - s_i g_i||, ||M^T g_i - s_i h_i||)` for the
    /// decomposed matrix `M`.
    pub fn max_residual(&self, m: &DMatrix<f64>) -> f64 {
        let mh = m * &self.right;
        let mtg = m.tr_mul(&self.left);
        (0..self.r())
            .map(|i| {
                let a = (mh.column(i) - self.left.column(i) * self.sigma[i]).norm();
                let b = (mtg.column(i) - self.right.column(i) * self.sigma[i]).norm();
                a.max(b)
            })
            .fold(0.0, f64::max)
    }
}

/// How the leading singular triplets are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdMethod {
    /// Dense for `p <= DENSE_SVD_MAX_P`, randomized above.
    Auto,
    Dense,
    /// Block subspace iteration from a seeded Gaussian start.
    Randomized { oversample: usize, max_iter: usize, seed: u64 },
}

impl Default for SvdMethod {
    fn default() -> Self {
        SvdMethod::Auto
    }
}

const RANDOMIZED_DEFAULT: SvdMethod = SvdMethod::Randomized { oversample: 10, max_iter: 300, seed: 0x5eed };

pub fn top_r_svd(s: &ScaledCountMatrix, r: usize) -> Result<SpectralDecomposition> {
    top_r_svd_with(s, r, SvdMethod::Auto)
}

pub fn top_r_svd_with(s: &ScaledCountMatrix, r: usize, method: SvdMethod) -> Result<SpectralDecomposition> {
    decompose(&s.matrix, r, method)
}

/// Leading singular triplets of an arbitrary square or rectangular matrix.
pub fn decompose(m: &DMatrix<f64>, r: usize, method: SvdMethod) -> Result<SpectralDecomposition> {
    let limit = m.nrows().min(m.ncols());
    if r == 0 || r > limit {
        return Err(invalid(alloc::format!("need 1 <= r <= {limit}, got r = {r}")));
    }
    let method = match method {
        SvdMethod::Auto if m.nrows().max(m.ncols()) <= DENSE_SVD_MAX_P => SvdMethod::Dense,
        SvdMethod::Auto => RANDOMIZED_DEFAULT,
        other => other,
    };
    let (sigma, left, right) = match method {
        SvdMethod::Dense | SvdMethod::Auto => dense(m, r)?,
        SvdMethod::Randomized { oversample, max_iter, seed } => randomized(m, r, oversample, max_iter, seed)?,
    };
    let rank_deficient = sigma[r - 1] <= RANK_TOL * sigma[0];
    let mut d = SpectralDecomposition { sigma, left, right, sign_fixed: false, rank_deficient };
    fix_signs(&mut d);
    Ok(d)
}

fn dense(m: &DMatrix<f64>, r: usize) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0).ok_or(Error::SingularSystem)?;
    let u = svd.u.ok_or(Error::SingularSystem)?;
    let v_t = svd.v_t.ok_or(Error::SingularSystem)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let order = &order[..r];
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left = DMatrix::from_fn(m.nrows(), r, |i, k| u[(i, order[k])]);
    let right = DMatrix::from_fn(m.ncols(), r, |j, k| v_t[(order[k], j)]);
    Ok((sigma, left, right))
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn randomized(
    m: &DMatrix<f64>,
    r: usize,
    oversample: usize,
    max_iter: usize,
    seed: u64,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let cols = m.ncols();
    let width = (r + oversample).min(cols).min(m.nrows());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(cols, width, |_, _| StandardNormal.sample(&mut rng));
    let mut basis = orthonormalize(m.tr_mul(&(m * omega)));
    let mut best = None;
    for it in 0..max_iter.max(1) {
        basis = orthonormalize(m.tr_mul(&(m * &basis)));
        if it % 5 != 4 && it + 1 != max_iter.max(1) {
            continue;
        }
        let projected = m * &basis;
        let svd = SVD::try_new(projected, true, true, f64::EPSILON, 0).ok_or(Error::SingularSystem)?;
        let u = svd.u.ok_or(Error::SingularSystem)?;
        let v_t = svd.v_t.ok_or(Error::SingularSystem)?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let order = &order[..r];
        let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let left = DMatrix::from_fn(m.nrows(), r, |i, k| u[(i, order[k])]);
        let small_right = DMatrix::from_fn(width, r, |a, k| v_t[(order[k], a)]);
        let right = &basis * small_right;
        let residual = (m.tr_mul(&left) - DMatrix::from_fn(cols, r, |j, k| right[(j, k)] * sigma[k])).norm();
        let done = residual <= 1e-11 * sigma[0];
        best = Some((sigma, left, right));
        if done {
            break;
        }
    }
    best.ok_or(Error::SingularSystem)
}

/// Applies the sign convention in place.
pub fn fix_signs(d: &mut SpectralDecomposition) {
    for k in 0..d.r() {
        let col = d.right.column(k);
        let mut best = 0;
        for j in 1..col.len() {
            if col[j].abs() > col[best].abs() {
                best = j;
            }
        }
        if col[best] < 0.0 {
            d.right.column_mut(k).neg_mut();
            d.left.column_mut(k).neg_mut();
        }
    }
    if d.right.column(0).sum() < 0.0 {
        d.right.column_mut(0).neg_mut();
        d.left.column_mut(0).neg_mut();
    }
    d.sign_fixed = true;
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn counts(rows: usize, data: &[u64]) -> TransitionCounts {
        TransitionCounts::from_matrix(DMatrix::from_row_slice(rows, rows, data)).unwrap()
    }

    #[test]
    fn unit_masses_leave_counts_unchanged() {
        let s = scale_counts(&counts(2, &[0, 1, 1, 0])).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(s.column_mass().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.total(), 2.0);
    }

    #[test]
    fn scaling_divides_by_root_mass() {
        let s = scale_counts(&counts(2, &[0, 4, 4, 0])).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]));
    }

    #[test]
    fn zero_columns_are_all_reported() {
        assert_eq!(scale_counts(&counts(2, &[1, 0, 1, 0])), Err(Error::ZeroColumn(vec![1])));
        assert_eq!(
            scale_counts(&counts(3, &[0, 1, 0, 0, 1, 0, 0, 1, 0])),
            Err(Error::ZeroColumn(vec![0, 2]))
        );
    }

    #[test]
    fn rank_one_matrix() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let m = &u * v.transpose();
        let d = decompose(&m, 2, SvdMethod::Dense).unwrap();
        assert!((d.sigma[0] - 1.0).abs() < 1e-12);
        assert!(d.sigma[1].abs() < 1e-12);
        assert!(d.rank_deficient);
        assert!((d.h1() - &v).norm() < 1e-10);
        let (oh, og) = d.orthonormality_error();
        assert!(oh < 1e-10 && og < 1e-10);
        assert!(d.max_residual(&m) < 1e-8);
    }

    #[test]
    fn diagonal_matrix_gives_unit_vectors() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let d = decompose(&m, 2, SvdMethod::Dense).unwrap();
        assert_eq!(d.sigma.len(), 2);
        assert!((d.sigma[0] - 3.0).abs() < 1e-12 && (d.sigma[1] - 2.0).abs() < 1e-12);
        for k in 0..2 {
            for j in 0..3 {
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((d.right[(j, k)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sign_convention_is_idempotent_and_deterministic() {
        let m = DMatrix::from_fn(6, 6, |i, j| ((i * 5 + j * 3) % 7) as f64 + 0.5);
        let a = decompose(&m, 3, SvdMethod::Dense).unwrap();
        let b = decompose(&m, 3, SvdMethod::Dense).unwrap();
        assert_eq!(a.right, b.right);
        let mut c = a.clone();
        c.right.column_mut(1).neg_mut();
        c.left.column_mut(1).neg_mut();
        fix_signs(&mut c);
        assert_eq!(a.right, c.right);
        assert!(a.h1().sum() > 0.0);
    }

    #[test]
    fn randomized_matches_dense() {
        let m = DMatrix::from_fn(40, 40, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + ((i * j) % 5) as f64 * 0.01);
        let dense = decompose(&m, 3, SvdMethod::Dense).unwrap();
        let rand = decompose(&m, 3, RANDOMIZED_DEFAULT).unwrap();
        for k in 0..3 {
            assert!((dense.sigma[k] - rand.sigma[k]).abs() < 1e-9 * dense.sigma[0]);
        }
        assert!((dense.right.clone() - &rand.right).abs().max() < 1e-7);
        let (oh, og) = rand.orthonormality_error();
        assert!(oh < 1e-10 && og < 1e-10);
        assert!(rand.max_residual(&m) < 1e-8 * rand.sigma[0]);
    }

    #[test]
    fn oracle_matrix_of_symmetric_two_state_chain() {
        let u = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let model = SoftAggregationModel::new(u, v, vec![vec![0], vec![1]]).unwrap();
        let q = oracle_scaled_matrix(&model).unwrap();
        // 0.25 / sqrt(0.5)
        let want = 0.25 / 0.5f64.sqrt();
        for x in q.matrix().iter() {
            assert!((x - want).abs() < 1e-10);
        }
        assert_eq!(q.total(), 1.0);
    }
}
