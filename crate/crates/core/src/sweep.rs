//! Monte Carlo error-rate sweeps: cell enumeration, one-cell execution and
//! aggregation into a log-log rate fit. Cells are independent; the std
//! crate runs them in parallel.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate, AggregationEstimate, EstimateOptions, ZeroMassPolicy, DEFAULT_DELTA0};
use crate::evaluation::{align_and_score, compare_p_with_estimate, fit_rate, mean_std, RateFit, RatePoint};
use crate::markov::{sample_counts, InitialState};
use crate::synth::{generate_model, SynthSpec};

/// Stride between model seeds of consecutive repetitions.
pub const REP_SEED_STRIDE: u64 = 1_000_000_000;
/// A grid point with more than this fraction of failed repetitions aborts.
pub const MAX_FAILED_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub enum SweepMode {
    /// Fixed number of states, varying trajectory length.
    FixedP { p: usize, n_grid: Vec<u64> },
    /// `n = ratio * p` for each `p` in the grid.
    FixedRatio { ratio: f64, p_grid: Vec<usize> },
}

impl SweepMode {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMode::FixedP { .. } => "fixed_p",
            SweepMode::FixedRatio { .. } => "fixed_ratio",
        }
    }

    /// `(p, n)` for each grid point, in grid order.
    pub fn grid(&self) -> Vec<(usize, u64)> {
        match self {
            SweepMode::FixedP { p, n_grid } => n_grid.iter().map(|&n| (*p, n)).collect(),
            SweepMode::FixedRatio { ratio, p_grid } => {
                p_grid.iter().map(|&p| (p, Float::round(*ratio * p as f64) as u64)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorCount {
    PerMeta(usize),
    /// `max(1, floor(fraction * p))` anchors per meta-state.
    FractionOfP(f64),
}

impl AnchorCount {
    pub fn per_meta(&self, p: usize) -> usize {
        match *self {
            AnchorCount::PerMeta(a) => a,
            AnchorCount::FractionOfP(f) => ((f * p as f64) as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub r: usize,
    pub anchors: AnchorCount,
    pub reps: usize,
    pub dirichlet_alpha: f64,
    pub delta0: f64,
    pub seed: u64,
    pub options: EstimateOptions,
}

impl SweepConfig {
    /// Defaults: 5 reps, Dirichlet(1), default threshold, unvisited states
    /// dropped.
    pub fn new(mode: SweepMode, r: usize, anchors: AnchorCount, seed: u64) -> Self {
        Self {
            mode,
            r,
            anchors,
            reps: 5,
            dirichlet_alpha: 1.0,
            delta0: DEFAULT_DELTA0,
            seed,
            options: EstimateOptions { zero_mass: ZeroMassPolicy::Drop, ..EstimateOptions::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.mode.grid();
        if grid.len() < 3 {
            return Err(invalid("sweep grid needs at least 3 points"));
        }
        let xs: Vec<u64> = grid.iter().map(|&(_, n)| n).collect();
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep grid must be strictly increasing in n"));
        }
        if grid.iter().any(|&(_, n)| n == 0) {
            return Err(invalid("sweep grid contains n = 0"));
        }
        if self.reps == 0 {
            return Err(invalid("reps must be >= 1"));
        }
        if let SweepMode::FixedRatio { ratio, .. } = self.mode {
            if !(ratio > 0.0) || !ratio.is_finite() {
                return Err(invalid("n/p ratio must be positive"));
            }
        }
        for &(p, _) in &grid {
            self.synth_spec(p, 0).validate()?;
        }
        Ok(())
    }

    fn synth_spec(&self, p: usize, model_seed: u64) -> SynthSpec {
        SynthSpec {
            p,
            r: self.r,
            anchors_per_meta: self.anchors.per_meta(p),
            dirichlet_alpha: self.dirichlet_alpha,
            seed: model_seed,
        }
    }

    /// All cells, ordered by grid point then repetition.
    ///
    /// Repetition `rep` uses model seed `seed + rep * REP_SEED_STRIDE`, so
    /// in fixed-p mode every n sees the same model per repetition. The
    /// trajectory seed additionally depends on the grid point.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (g, (p, n)) in self.mode.grid().into_iter().enumerate() {
            for rep in 0..self.reps {
                let model_seed = self.seed.wrapping_add((rep as u64).wrapping_mul(REP_SEED_STRIDE));
                out.push(Cell {
                    index: out.len(),
                    grid_index: g,
                    p,
                    n,
                    rep,
                    model_seed,
                    trajectory_seed: model_seed.wrapping_add(1 + g as u64),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub index: usize,
    pub grid_index: usize,
    pub p: usize,
    pub n: u64,
    pub rep: usize,
    pub model_seed: u64,
    pub trajectory_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub tv_v: f64,
    pub tv_u: f64,
    pub tv_p_lowrank: f64,
    pub tv_p_empirical: f64,
    pub anchors_precision: f64,
    pub anchors_recall: f64,
    pub anchors_exact: bool,
}

/// Generates the model, simulates the chain from stationarity, estimates
/// and scores one cell.
pub fn run_cell(config: &SweepConfig, cell: &Cell) -> Result<CellResult> {
    run_cell_with_estimate(config, cell).map(|(res, _)| res)
}

/// [`run_cell`] that also returns the estimate.
pub fn run_cell_with_estimate(config: &SweepConfig, cell: &Cell) -> Result<(CellResult, AggregationEstimate)> {
    let model = generate_model(&config.synth_spec(cell.p, cell.model_seed))?;
    let p_true = model.transition_matrix()?;
    let n = usize::try_from(cell.n).map_err(|_| invalid("n does not fit in usize"))?;
    let counts = sample_counts(&p_true, n, InitialState::Stationary, cell.trajectory_seed)?;
    let est = estimate(&counts, config.r, config.delta0, &config.options)?;
    let errs = align_and_score(&est, &model)?;
    let cmp = compare_p_with_estimate(&est, &counts, &model)?;
    let res = CellResult {
        cell: *cell,
        tv_v: errs.tv_v_mean,
        tv_u: errs.tv_u_mean,
        tv_p_lowrank: cmp.tv_lowrank,
        tv_p_empirical: cmp.tv_empirical,
        anchors_precision: errs.anchor_precision_strict,
        anchors_recall: errs.anchor_recall_strict,
        anchors_exact: errs.anchors_exact_strict,
    };
    Ok((res, est))
}

/// Per-cell outcome; failures carry the error.
pub type CellOutcome = core::result::Result<CellResult, Error>;

/// Groups outcomes by grid point and fits the log-log slope of mean
/// `tv_V` against `n`. Order of `outcomes` does not matter.
pub fn summarize<E>(config: &SweepConfig, outcomes: &[(Cell, core::result::Result<CellResult, E>)]) -> Result<RateFit> {
    let grid = config.mode.grid();
    let mut by_point: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (cell, outcome) in outcomes {
        let entry = by_point.entry(cell.grid_index).or_insert_with(|| (Vec::new(), 0));
        match outcome {
            Ok(res) => entry.0.push(res.tv_v),
            Err(_) => entry.1 += 1,
        }
    }
    let mut points = Vec::with_capacity(grid.len());
    for (g, &(p, n)) in grid.iter().enumerate() {
        let (mut ok, failed) = by_point.remove(&g).unwrap_or_default();
        let total = ok.len() + failed;
        if total == 0 {
            return Err(invalid(&format!("no results for grid point p={p}, n={n}")));
        }
        if failed as f64 > MAX_FAILED_FRACTION * total as f64 {
            return Err(Error::SweepAborted { p, n, failed, reps: total });
        }
        // Sum in a fixed order so the fit does not depend on completion order.
        ok.sort_by(|a, b| a.total_cmp(b));
        let (mean, std) = mean_std(&ok);
        points.push(RatePoint { n: n as f64, mean_error: mean, std_error: std });
    }
    fit_rate(points)
}

/// Runs every cell sequentially and fits the rate.
pub fn rate_sweep(config: &SweepConfig) -> Result<(Vec<(Cell, CellOutcome)>, RateFit)> {
    config.validate()?;
    let outcomes: Vec<(Cell, CellOutcome)> =
        config.cells().into_iter().map(|c| (c, run_cell(config, &c))).collect();
    let fit = summarize(config, &outcomes)?;
    Ok((outcomes, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small() -> SweepConfig {
        let mut c = SweepConfig::new(
            SweepMode::FixedP { p: 20, n_grid: vec![2_000, 8_000, 32_000] },
            2,
            AnchorCount::PerMeta(3),
            7,
        );
        c.reps = 2;
        c
    }

    #[test]
    fn cells_enumerate_grid_times_reps() {
        let c = small();
        let cells = c.cells();
        assert_eq!(cells.len(), 6);
        assert!(cells.iter().enumerate().all(|(i, cell)| cell.index == i));
        assert_eq!(cells[0].model_seed, cells[2].model_seed);
        assert_ne!(cells[0].trajectory_seed, cells[2].trajectory_seed);
        assert_eq!(cells[1].model_seed, 7 + REP_SEED_STRIDE);
    }

    #[test]
    fn fixed_ratio_grid() {
        let m = SweepMode::FixedRatio { ratio: 1000.0, p_grid: vec![100, 200, 400] };
        assert_eq!(m.grid(), vec![(100, 100_000), (200, 200_000), (400, 400_000)]);
        assert_eq!(AnchorCount::FractionOfP(0.125).per_meta(200), 25);
    }

    #[test]
    fn grid_validation() {
        let mut c = small();
        c.mode = SweepMode::FixedP { p: 20, n_grid: vec![10, 20] };
        assert!(c.validate().is_err());
        c.mode = SweepMode::FixedP { p: 20, n_grid: vec![10, 30, 20] };
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_sweep_runs_and_errors_shrink() {
        let (outcomes, fit) = rate_sweep(&small()).unwrap();
        assert!(outcomes.iter().all(|(_, o)| o.is_ok()));
        assert_eq!(fit.points.len(), 3);
        assert!(fit.slope < 0.0, "slope {}", fit.slope);
    }

    #[test]
    fn summarize_is_order_independent() {
        let c = small();
        let (mut outcomes, fit) = rate_sweep(&c).unwrap();
        outcomes.reverse();
        assert_eq!(summarize(&c, &outcomes).unwrap(), fit);
    }

    #[test]
    fn too_many_failures_abort() {
        let c = small();
        let (mut outcomes, _) = rate_sweep(&c).unwrap();
        // one of two reps failing at the first grid point exceeds 40%
        outcomes[0].1 = Err(Error::SingularSystem);
        assert!(matches!(summarize(&c, &outcomes), Err(Error::SweepAborted { .. })));
    }
}
