//! Finite Markov chains: transition matrices, trajectories, transition
//! counts, stationary distributions and mixing times.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, Error, Result};

/// Row-sum tolerance for a valid transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-10;
/// Default residual tolerance for [`stationary_distribution`].
pub const STATIONARY_TOL: f64 = 1e-12;
/// Default iteration cap for [`stationary_distribution`].
pub const STATIONARY_MAX_ITER: usize = 100_000;

/// A dense row-stochastic `p x p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    matrix: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows != cols {
            return Err(Error::DimensionMismatch { expected: rows, found: cols });
        }
        if rows == 0 {
            return Err(invalid("transition matrix must have at least one state"));
        }
        for i in 0..rows {
            let mut sum = 0.0;
            for j in 0..cols {
                let x = matrix[(i, j)];
                if !(0.0..=1.0 + ROW_SUM_TOL).contains(&x) {
                    return Err(invalid(alloc::format!("entry ({i}, {j}) = {x} outside [0, 1]")));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(alloc::format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// Stationary distribution `pi` with `pi^T P = pi^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pi: DVector<f64>,
}

impl StationaryDistribution {
    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.pi
    }
}

/// `sum_j |(x^T P)_j - x_j|`.
pub fn stationarity_residual(p: &TransitionMatrix, x: &DVector<f64>) -> f64 {
    let xp = p.matrix.tr_mul(x);
    crate::linalg::l1_distance(xp.iter(), x.iter())
}

/// Stationary distribution by half-lazy power iteration on `P^T`.
///
/// Two starting vectors (uniform and a linear ramp) are iterated until each
/// has undamped residual `||x^T P - x^T||_1 <= tol`. If they converge to
/// different vectors the chain has several stationary distributions and
/// the call fails with [`Error::NonConvergent`], as it does when
/// `max_iter` is exhausted.
pub fn stationary_distribution(
    p: &TransitionMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryDistribution> {
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    let n = p.p();
    let uniform = DVector::from_element(n, 1.0 / n as f64);
    let ramp_total = (n * (n + 1) / 2) as f64;
    let ramp = DVector::from_fn(n, |j, _| (j + 1) as f64 / ramp_total);

    let (a, iters_a) = lazy_power_iteration(p, uniform, tol, max_iter)?;
    let (b, _) = lazy_power_iteration(p, ramp, tol, max_iter)?;

    let disagreement = crate::linalg::l1_distance(a.iter(), b.iter());
    if disagreement > tol.sqrt().max(tol) {
        return Err(Error::NonConvergent { iterations: iters_a, residual: disagreement });
    }
    Ok(StationaryDistribution { pi: a })
}

fn lazy_power_iteration(
    p: &TransitionMatrix,
    mut x: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let xp = p.matrix.tr_mul(&x);
        residual = crate::linalg::l1_distance(xp.iter(), x.iter());
        if residual <= tol {
            return Ok((x, it));
        }
        x = (x + xp) * 0.5;
        let s = x.sum();
        x /= s;
    }
    Err(Error::NonConvergent { iterations: max_iter, residual })
}

/// Mixing time: the smallest `k >= 1` with `max_i ||(P^k)_i - pi||_1 <= 1/2`.
pub fn mixing_time(p: &TransitionMatrix, pi: &StationaryDistribution, k_max: usize) -> Result<usize> {
    let n = p.p();
    if pi.pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: pi.pi.len() });
    }
    let mut power = p.matrix.clone();
    for k in 1..=k_max {
        let worst = (0..n)
            .map(|i| crate::linalg::l1_distance(power.row(i).iter(), pi.pi.iter()))
            .fold(0.0, f64::max);
        if worst <= 0.5 {
            return Ok(k);
        }
        if k < k_max {
            power = &power * &p.matrix;
        }
    }
    Err(Error::NotMixedBy(k_max))
}

/// Observed path `X_0, ..., X_n` together with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of transitions.
    pub fn n(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// How `X_0` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    State(usize),
    Stationary,
}

/// Cumulative row tables for inverse-CDF sampling.
struct RowSampler {
    cdf: Vec<Vec<f64>>,
    last_positive: Vec<usize>,
}

impl RowSampler {
    fn new(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut cdf = Vec::with_capacity(n);
        let mut last_positive = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = 0.0;
            let mut row = Vec::with_capacity(n);
            let mut last = 0;
            for j in 0..n {
                let x = m[(i, j)];
                if x > 0.0 {
                    last = j;
                }
                acc += x;
                row.push(acc);
            }
            cdf.push(row);
            last_positive.push(last);
        }
        Self { cdf, last_positive }
    }

    fn draw(&self, from: usize, u: f64) -> usize {
        let row = &self.cdf[from];
        let j = row.partition_point(|&c| c <= u);
        if j >= row.len() {
            self.last_positive[from]
        } else {
            j
        }
    }
}

fn draw_from(weights: &DVector<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = j;
        }
        acc += w;
        if u < acc {
            return j;
        }
    }
    last
}

/// Simulates `n` steps of the chain. The output is a pure function of
/// `(P, n, start, seed)`.
pub fn sample_trajectory(
    p: &TransitionMatrix,
    n: usize,
    start: InitialState,
    seed: u64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(n.saturating_add(1));
    simulate(p, n, start, seed, |s| states.push(s))?;
    Ok(Trajectory { states, seed })
}

/// Transition counts of the trajectory `sample_trajectory(p, n, start, seed)`
/// without materializing it.
pub fn sample_counts(
    p: &TransitionMatrix,
    n: usize,
    start: InitialState,
    seed: u64,
) -> Result<TransitionCounts> {
    let dim = p.p();
    let mut counts = DMatrix::<u64>::zeros(dim, dim);
    let mut prev: Option<usize> = None;
    simulate(p, n, start, seed, |s| {
        if let Some(i) = prev {
            counts[(i, s)] += 1;
        }
        prev = Some(s);
    })?;
    TransitionCounts::from_matrix(counts)
}

fn simulate(
    p: &TransitionMatrix,
    n: usize,
    start: InitialState,
    seed: u64,
    mut visit: impl FnMut(usize),
) -> Result<()> {
    if n == 0 {
        return Err(invalid("trajectory length n must be >= 1"));
    }
    let states_count = p.p();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x0 = match start {
        InitialState::State(s) if s < states_count => s,
        InitialState::State(s) => return Err(Error::StateOutOfRange { state: s, p: states_count }),
        InitialState::Stationary => {
            let pi = stationary_distribution(p, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
            draw_from(&pi.pi, rng.random::<f64>())
        }
    };
    let sampler = RowSampler::new(&p.matrix);
    visit(x0);
    let mut current = x0;
    for _ in 0..n {
        current = sampler.draw(current, rng.random::<f64>());
        visit(current);
    }
    Ok(())
}

/// Transition counts `N[i][j]` with column sums `m = N^T 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    counts: DMatrix<u64>,
    column_mass: Vec<u64>,
    total: u64,
}

impl TransitionCounts {
    pub fn from_matrix(counts: DMatrix<u64>) -> Result<Self> {
        if counts.nrows() != counts.ncols() {
            return Err(Error::DimensionMismatch { expected: counts.nrows(), found: counts.ncols() });
        }
        if counts.nrows() == 0 {
            return Err(invalid("count matrix must have at least one state"));
        }
        let column_mass: Vec<u64> = counts.column_iter().map(|c| c.iter().sum()).collect();
        let total = column_mass.iter().sum();
        Ok(Self { counts, column_mass, total })
    }

    pub fn p(&self) -> usize {
        self.counts.nrows()
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    /// Column sums `m[j] = sum_i N[i][j]`.
    pub fn column_mass(&self) -> &[u64] {
        &self.column_mass
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.row_iter().map(|r| r.iter().sum()).collect()
    }

    /// Total number of transitions.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.counts.map(|x| x as f64)
    }

    /// Counts restricted to the states in `keep` (in that order).
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let p = self.p();
        if let Some(&bad) = keep.iter().find(|&&s| s >= p) {
            return Err(Error::StateOutOfRange { state: bad, p });
        }
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| self.counts[(keep[a], keep[b])]);
        Self::from_matrix(sub)
    }
}

/// Tallies `N[i][j] = #{t : X_t = i, X_{t+1} = j}`.
pub fn count_transitions(t: &Trajectory, p: usize) -> Result<TransitionCounts> {
    if let Some(&bad) = t.states.iter().find(|&&s| s >= p) {
        return Err(Error::StateOutOfRange { state: bad, p });
    }
    let mut counts = DMatrix::<u64>::zeros(p, p);
    for w in t.states.windows(2) {
        counts[(w[0], w[1])] += 1;
    }
    TransitionCounts::from_matrix(counts)
}

/// Row-normalized counts with additive smoothing:
/// `(N[i][j] + s) / (sum_k N[i][k] + p s)`.
pub fn empirical_transition_matrix(c: &TransitionCounts, smoothing: f64) -> Result<TransitionMatrix> {
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(invalid("smoothing must be a finite nonnegative number"));
    }
    let p = c.p();
    let rows = c.row_sums();
    if smoothing == 0.0 {
        if let Some(i) = rows.iter().position(|&r| r == 0) {
            return Err(Error::EmptyRow(i));
        }
    }
    let m = DMatrix::from_fn(p, p, |i, j| {
        (c.counts[(i, j)] as f64 + smoothing) / (rows[i] as f64 + p as f64 * smoothing)
    });
    TransitionMatrix::new(m)
}
