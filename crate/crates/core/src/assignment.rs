//! Minimum-cost perfect matching on a square cost matrix (Hungarian method
//! with row/column potentials, O(n^3)).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

/// Returns `assign` with `assign[row] = column` minimizing the total cost.
///
/// Panics if `cost` is not square or contains non-finite entries.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    assert!(cost.iter().all(|x| x.is_finite()), "costs must be finite");
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials over rows (u) and columns (v); col_match[j] is the
    // row matched to column j, 0 meaning free.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_match = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_match[0] = row;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_match[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_match[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_match[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_match[j0] = col_match[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[col_match[j] - 1] = j - 1;
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost_of(cost: &DMatrix<f64>, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn three_by_three_against_all_permutations() {
        let cost = DMatrix::from_row_slice(3, 3, &[8.0, 4.0, 7.0, 5.0, 2.0, 3.0, 9.0, 4.0, 8.0]);
        let a = hungarian(&cost);
        let best = permutations(3).iter().map(|p| cost_of(&cost, p)).fold(f64::INFINITY, f64::min);
        assert_eq!(cost_of(&cost, &a), best);
        assert_eq!(best, 15.0);
    }

    #[test]
    fn identity_cost_prefers_diagonal() {
        let cost = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(hungarian(&cost), vec![0, 1, 2, 3]);
    }

    #[test]
    fn swapped_columns() {
        let cost = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(hungarian(&cost), vec![1, 0]);
    }
}
