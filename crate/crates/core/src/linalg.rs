//! Small dense helpers shared across modules.

use alloc::string::String;
use core::fmt::Write;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

pub fn l1_distance<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Median of the given values; 0 for an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Clips negative entries to zero and rescales to unit L1 norm. Returns
/// `false` (leaving the row untouched) when nothing positive remains.
pub fn clip_renormalize(row: &mut [f64]) -> bool {
    let total: f64 = row.iter().map(|x| x.max(0.0)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return false;
    }
    for x in row.iter_mut() {
        *x = x.max(0.0) / total;
    }
    true
}

/// Row-wise clip-and-renormalize of a matrix; rows that clip to all zero
/// become uniform. Returns the indices of those rows.
pub fn project_rows_to_simplex(m: &mut DMatrix<f64>) -> alloc::vec::Vec<usize> {
    let (rows, cols) = m.shape();
    let mut uniform = alloc::vec::Vec::new();
    let mut buf = alloc::vec![0.0; cols];
    for i in 0..rows {
        for k in 0..cols {
            buf[k] = m[(i, k)];
        }
        if !clip_renormalize(&mut buf) {
            buf.iter_mut().for_each(|x| *x = 1.0 / cols as f64);
            uniform.push(i);
        }
        for k in 0..cols {
            m[(i, k)] = buf[k];
        }
    }
    uniform
}

/// Mean over rows of the L1 distance between matching rows.
pub fn mean_row_l1(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let rows = a.nrows();
    let total: f64 = (0..rows)
        .map(|i| l1_distance(a.row(i).iter(), b.row(i).iter()))
        .sum();
    total / rows as f64
}

/// Maximum absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Eigenvalues of a small symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> alloc::vec::Vec<f64> {
    let mut ev: alloc::vec::Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// SHA-256 over the little-endian bytes of the shape and entries.
pub fn hash_matrix(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for x in m.iter() {
        h.update(x.to_bits().to_le_bytes());
    }
    hex_digest(&h.finalize())
}

pub fn hash_indices(v: &[usize]) -> String {
    let mut h = Sha256::new();
    for &x in v {
        h.update((x as u64).to_le_bytes());
    }
    hex_digest(&h.finalize())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}
