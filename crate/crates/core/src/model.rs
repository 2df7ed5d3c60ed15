use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::markov::TransitionMatrix;

/// Tolerance on the row sums of `U` and the column sums of `V`.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Ground-truth soft state aggregation `P = U V^T`.
///
/// Rows of `U` (p x r) are aggregation distributions `P(Z_t = k | X_t = i)`;
/// columns of `V` (p x r) are disaggregation distributions
/// `P(X_{t+1} = j | Z_t = k)`. `anchor_sets[k]` lists the planted anchor
/// states of meta-state `k`: states whose row of `V` is supported on column
/// `k` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAggregationModel {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    anchor_sets: Vec<Vec<usize>>,
}

impl SoftAggregationModel {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, anchor_sets: Vec<Vec<usize>>) -> Result<Self> {
        let (p, r) = u.shape();
        if v.shape() != (p, r) {
            return Err(Error::DimensionMismatch { expected: p * r, found: v.nrows() * v.ncols() });
        }
        if r == 0 || r > p {
            return Err(invalid(format!("need 1 <= r <= p, got r = {r}, p = {p}")));
        }
        if u.iter().chain(v.iter()).any(|x| !(x >= &0.0) || !x.is_finite()) {
            return Err(invalid("U and V must be finite and nonnegative"));
        }
        for i in 0..p {
            let s = u.row(i).sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(invalid(format!("row {i} of U sums to {s}")));
            }
        }
        for k in 0..r {
            let s = v.column(k).sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(invalid(format!("column {k} of V sums to {s}")));
            }
        }
        if !anchor_sets.is_empty() && anchor_sets.len() != r {
            return Err(Error::DimensionMismatch { expected: r, found: anchor_sets.len() });
        }
        for (k, set) in anchor_sets.iter().enumerate() {
            for &j in set {
                if j >= p {
                    return Err(Error::StateOutOfRange { state: j, p });
                }
                let single = v[(j, k)] > 0.0 && (0..r).all(|s| s == k || v[(j, s)] == 0.0);
                if !single {
                    return Err(invalid(format!("state {j} is not an anchor of meta-state {k}")));
                }
            }
        }
        Ok(Self { u, v, anchor_sets })
    }

    pub fn p(&self) -> usize {
        self.u.nrows()
    }

    pub fn r(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Planted anchors per meta-state; empty when unknown.
    pub fn anchor_sets(&self) -> &[Vec<usize>] {
        &self.anchor_sets
    }

    /// All planted anchors, sorted.
    pub fn anchors(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.anchor_sets.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    /// Meta-state owning anchor `j`, if `j` is a planted anchor.
    pub fn anchor_owner(&self, j: usize) -> Option<usize> {
        self.anchor_sets.iter().position(|set| set.contains(&j))
    }

    /// `P = U V^T`.
    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        TransitionMatrix::new(&self.u * self.v.transpose())
    }

    /// Same model with meta-states relabeled: new column `k` is old column
    /// `order[k]`.
    pub fn permute_meta_states(&self, order: &[usize]) -> Result<Self> {
        let r = self.r();
        let mut seen = alloc::vec![false; r];
        if order.len() != r || order.iter().any(|&k| k >= r || core::mem::replace(&mut seen[k], true)) {
            return Err(invalid("order must be a permutation of 0..r"));
        }
        let u = DMatrix::from_fn(self.p(), r, |i, k| self.u[(i, order[k])]);
        let v = DMatrix::from_fn(self.p(), r, |i, k| self.v[(i, order[k])]);
        let anchors = if self.anchor_sets.is_empty() {
            Vec::new()
        } else {
            order.iter().map(|&k| self.anchor_sets[k].clone()).collect()
        };
        Self::new(u, v, anchors)
    }
}
