//! Brute-force linear-algebra oracles for cross-checking the Cholesky
//! routes. Everything here works on plain dense matrices and stays
//! independent of the library's factorization code.

#![allow(dead_code)]

use banditsim::linalg::{FeatureVector, PsdAccumulator};
use rand::Rng;

/// Dense `ridge*I + W` as row-major nested vectors.
pub fn ridged_dense(acc: &PsdAccumulator<f64>) -> Vec<Vec<f64>> {
    let d = acc.dim();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = acc.entry(i, j);
        }
        out[i][i] += acc.ridge();
    }
    out
}

/// log(det(A)) through LU decomposition with partial pivoting.
pub fn lu_log_det(matrix: &[Vec<f64>]) -> f64 {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut sign = 1.0f64;
    let mut log_det = 0.0f64;
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col][col].abs();
        for row in (col + 1)..n {
            if a[row][col].abs() > best {
                best = a[row][col].abs();
                pivot = row;
            }
        }
        if pivot != col {
            a.swap(pivot, col);
            sign = -sign;
        }
        let diag = a[col][col];
        assert!(diag != 0.0, "singular matrix in LU oracle");
        if diag < 0.0 {
            sign = -sign;
        }
        log_det += diag.abs().ln();
        for row in (col + 1)..n {
            let factor = a[row][col] / diag;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    assert!(sign > 0.0, "oracle saw a non-positive determinant");
    log_det
}

/// Matrix inverse through Gauss-Jordan elimination with partial pivoting.
pub fn invert(matrix: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut wide = row.clone();
            wide.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            wide
        })
        .collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col][col].abs();
        for row in (col + 1)..n {
            if a[row][col].abs() > best {
                best = a[row][col].abs();
                pivot = row;
            }
        }
        a.swap(pivot, col);
        let diag = a[col][col];
        assert!(diag != 0.0, "singular matrix in inverse oracle");
        for k in 0..2 * n {
            a[col][k] /= diag;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..2 * n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    a.into_iter().map(|row| row[n..].to_vec()).collect()
}

pub fn mat_vec(matrix: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    matrix
        .iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A random accumulator built from `updates` rank-one additions with entries
/// in [-scale, scale].
pub fn random_accumulator<R: Rng>(
    rng: &mut R,
    dim: usize,
    ridge: f64,
    updates: usize,
    scale: f64,
) -> (PsdAccumulator<f64>, Vec<FeatureVector<f64>>) {
    let mut acc = PsdAccumulator::zeros(dim, ridge);
    let mut vectors = Vec::with_capacity(updates);
    for _ in 0..updates {
        let v = FeatureVector::new((0..dim).map(|_| rng.gen_range(-scale..scale)).collect());
        acc.rank_one_update(&v).unwrap();
        vectors.push(v);
    }
    (acc, vectors)
}
