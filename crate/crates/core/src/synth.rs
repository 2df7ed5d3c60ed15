//! Random ground-truth models with planted anchor states, and the
//! regularity statistics used to judge how hard a model is to learn.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Shadowed by inherent methods whenever std is in the build graph.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Result};
use crate::markov::{stationary_distribution, STATIONARY_MAX_ITER, STATIONARY_TOL};
use crate::model::SoftAggregationModel;

/// Parameters of a synthetic model.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub p: usize,
    pub r: usize,
    pub anchors_per_meta: usize,
    /// Symmetric Dirichlet concentration for rows of `U` and for the
    /// non-anchor rows of `V`.
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(p: usize, r: usize, anchors_per_meta: usize, seed: u64) -> Self {
        Self { p, r, anchors_per_meta, dirichlet_alpha: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(invalid("synthetic models need r >= 2"));
        }
        if self.anchors_per_meta == 0 {
            return Err(invalid("anchors_per_meta must be >= 1"));
        }
        if self.r.saturating_mul(self.anchors_per_meta) > self.p {
            return Err(invalid("r * anchors_per_meta must not exceed p"));
        }
        if !(self.dirichlet_alpha > 0.0) || !self.dirichlet_alpha.is_finite() {
            return Err(invalid("dirichlet_alpha must be positive"));
        }
        Ok(())
    }
}

fn dirichlet(rng: &mut ChaCha20Rng, gamma: &Gamma<f64>, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = gamma.sample(rng);
    }
    let s: f64 = out.iter().sum();
    if s > 0.0 && s.is_finite() {
        out.iter_mut().for_each(|x| *x /= s);
    } else {
        let k = out.len() as f64;
        out.iter_mut().for_each(|x| *x = 1.0 / k);
    }
}

/// Draws a random model.
///
/// Rows of `U` are symmetric Dirichlet. A random set of
/// `r * anchors_per_meta` states become anchors, `anchors_per_meta` per
/// meta-state, each with unit weight in its own column of `V` only; every
/// other state gets a Dirichlet row across all columns. Columns of `V` are
/// then scaled to sum to one.
pub fn generate_model(spec: &SynthSpec) -> Result<SoftAggregationModel> {
    spec.validate()?;
    let SynthSpec { p, r, anchors_per_meta, dirichlet_alpha, seed } = *spec;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gamma = Gamma::new(dirichlet_alpha, 1.0).map_err(|_| invalid("bad Dirichlet concentration"))?;

    let mut u = DMatrix::zeros(p, r);
    let mut row = vec![0.0; r];
    for i in 0..p {
        dirichlet(&mut rng, &gamma, &mut row);
        for k in 0..r {
            u[(i, k)] = row[k];
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut anchor_sets = vec![Vec::with_capacity(anchors_per_meta); r];
    let mut owner = vec![None; p];
    for (slot, &state) in order.iter().take(r * anchors_per_meta).enumerate() {
        let k = slot / anchors_per_meta;
        anchor_sets[k].push(state);
        owner[state] = Some(k);
    }
    for set in anchor_sets.iter_mut() {
        set.sort_unstable();
    }

    let mut v = DMatrix::zeros(p, r);
    for j in 0..p {
        match owner[j] {
            Some(k) => v[(j, k)] = 1.0,
            None => {
                dirichlet(&mut rng, &gamma, &mut row);
                for k in 0..r {
                    v[(j, k)] = row[k];
                }
            }
        }
    }
    for k in 0..r {
        let s = v.column(k).sum();
        v.column_mut(k).scale_mut(1.0 / s);
    }

    SoftAggregationModel::new(u, v, anchor_sets)
}

/// Normalized statistics of the regularity conditions, plus the anchor
/// margin of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    /// `p * min_j pi_j`
    pub pi_min_scaled: f64,
    /// `p * max_j pi_j`
    pub pi_max_scaled: f64,
    /// `r * max_k (U^T pi)_k`
    pub meta_mass_max_scaled: f64,
    /// `lambda_min(U^T U) * r / p`
    pub u_gram_min_scaled: f64,
    /// `lambda_min(V^T V) * p / r`
    pub v_gram_min_scaled: f64,
    /// `(sigma_1 - sigma_2) * sqrt(p)` for the population scaled matrix.
    pub eigengap_scaled: f64,
    /// `max / min` over the entries of `U^T P V`; infinite if an entry is 0.
    pub meta_transition_ratio: f64,
    /// Minimum of `delta_j` over non-anchor states; `+inf` when every state
    /// is a planted anchor.
    pub anchor_margin: f64,
    /// `delta_j = 1 - max_k P(Z_0 = k | X_1 = j)` per state (NaN for states
    /// that can never be entered).
    pub deltas: Vec<f64>,
}

/// Posterior-based margins `delta_j` with `P(Z_0 = k | X_1 = j)`
/// proportional to `(U^T pi)_k V[j, k]`.
pub fn anchor_deltas(model: &SoftAggregationModel, pi: &DVector<f64>) -> Vec<f64> {
    let meta_mass = model.u().tr_mul(pi);
    let (p, r) = (model.p(), model.r());
    (0..p)
        .map(|j| {
            let joint: Vec<f64> = (0..r).map(|k| meta_mass[k] * model.v()[(j, k)]).collect();
            let total: f64 = joint.iter().sum();
            if total > 0.0 {
                1.0 - joint.iter().fold(0.0, |a: f64, &b| a.max(b)) / total
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Computes every regularity statistic for `model`.
pub fn check_regularity(model: &SoftAggregationModel) -> Result<RegularityReport> {
    let (p, r) = (model.p(), model.r());
    let pf = p as f64;
    let rf = r as f64;
    let tm = model.transition_matrix()?;
    let pi = stationary_distribution(&tm, STATIONARY_TOL, STATIONARY_MAX_ITER)?.into_inner();

    let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let pi_max = pi.iter().copied().fold(0.0, f64::max);
    let meta_mass = model.u().tr_mul(&pi);
    let meta_max = meta_mass.iter().copied().fold(0.0, f64::max);

    let u_gram = model.u().tr_mul(model.u());
    let v_gram = model.v().tr_mul(model.v());
    let u_min = crate::linalg::symmetric_eigenvalues(&u_gram)[0].max(0.0);
    let v_min = crate::linalg::symmetric_eigenvalues(&v_gram)[0].max(0.0);

    let q = crate::spectral::population_scaled(tm.matrix(), &pi);
    let mut sv: Vec<f64> = q.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let gap = if sv.len() >= 2 { sv[0] - sv[1] } else { sv[0] };

    let meta_p = model.u().transpose() * tm.matrix() * model.v();
    let e_max = meta_p.iter().copied().fold(0.0, f64::max);
    let e_min = meta_p.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if e_min > 0.0 { e_max / e_min } else { f64::INFINITY };

    let deltas = anchor_deltas(model, &pi);
    let planted = model.anchors();
    let margin = deltas
        .iter()
        .enumerate()
        .filter(|(j, d)| planted.binary_search(j).is_err() && !d.is_nan())
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);

    Ok(RegularityReport {
        pi_min_scaled: pi_min * pf,
        pi_max_scaled: pi_max * pf,
        meta_mass_max_scaled: meta_max * rf,
        u_gram_min_scaled: u_min * rf / pf,
        v_gram_min_scaled: v_min * pf / rf,
        eigengap_scaled: gap.max(0.0) * pf.sqrt(),
        meta_transition_ratio: ratio,
        anchor_margin: margin,
        deltas,
    })
}
