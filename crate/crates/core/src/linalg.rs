//! Dense symmetric positive-definite linear algebra.
//!
//! Everything the learner needs reduces to four operations on ridged Gram
//! matrices `V = ridge*I + W`: rank-one accumulation, log-determinants,
//! ridge solves, and matrix-weighted norms. Matrices are stored dense and
//! square, the upper triangle is computed and mirrored on every update so
//! symmetry holds bit-exactly, and Cholesky factors are recomputed from the
//! stored matrix whenever one is needed (O(d^3), irrelevant at d <= 36).
//! There is no incremental factor maintenance and no Sherman-Morrison
//! inverse tracking; recomputation keeps results identical regardless of
//! the order agents execute in.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is numerically degenerate (Cholesky pivot {pivot} not positive)")]
    NotPositiveDefinite { pivot: usize },
    #[error("empty action set")]
    EmptyActionSet,
}

/// A d-dimensional feature vector.
///
/// Entries are plain coordinates produced by a feature map; constructors do
/// not validate finiteness (environments guarantee it, and tests assert it).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<S: Scalar> {
    entries: Vec<S>,
}

impl<S: Scalar> FeatureVector<S> {
    pub fn new(entries: Vec<S>) -> Self {
        Self { entries }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: vec![S::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.entries
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Self) -> S {
        debug_assert_eq!(self.dim(), other.dim());
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }

    /// `self + other * scale`, used for feature offsets.
    pub fn axpy(&self, scale: S, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self::new(
            self.entries
                .iter()
                .zip(other.entries.iter())
                .map(|(&a, &b)| a + scale * b)
                .collect(),
        )
    }

    pub fn scaled(&self, scale: S) -> Self {
        Self::new(self.entries.iter().map(|&a| a * scale).collect())
    }
}

impl<S: Scalar> std::ops::Index<usize> for FeatureVector<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.entries[i]
    }
}

/// Accumulated reward-weighted feature sums (the right-hand side of the
/// ridge system).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStatistics<S: Scalar> {
    vector: Vec<S>,
}

impl<S: Scalar> LinearStatistics<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            vector: vec![S::zero(); dim],
        }
    }

    pub fn from_vec(vector: Vec<S>) -> Self {
        Self { vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.vector
    }

    /// Add `v * y` to the running statistic.
    pub fn accumulate(&mut self, v: &FeatureVector<S>, y: S) -> Result<(), LinalgError> {
        if v.dim() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim(),
                got: v.dim(),
            });
        }
        for (u, &x) in self.vector.iter_mut().zip(v.as_slice()) {
            *u += x * y;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), LinalgError> {
        if other.dim() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        for (u, &x) in self.vector.iter_mut().zip(other.as_slice()) {
            *u += x;
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        for u in self.vector.iter_mut() {
            *u = S::zero();
        }
    }

    pub fn norm(&self) -> S {
        self.vector.iter().map(|&x| x * x).sum::<S>().sqrt()
    }
}

/// A symmetric PSD accumulator `W` together with its ridge `lambda`, so the
/// factorizable object is always `V = lambda*I + W`.
///
/// The ridge may be zero for plain sample buffers (local `W` buffers between
/// synchronizations); any accumulator that actually gets factorized carries
/// the regularizer `lambda > 0` and is positive definite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdAccumulator<S: Scalar> {
    dim: usize,
    ridge: S,
    /// Row-major `dim x dim`, kept exactly symmetric.
    matrix: Vec<S>,
}

impl<S: Scalar> PsdAccumulator<S> {
    pub fn zeros(dim: usize, ridge: S) -> Self {
        Self {
            dim,
            ridge,
            matrix: vec![S::zero(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ridge(&self) -> S {
        self.ridge
    }

    pub fn matrix(&self) -> &[S] {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> S {
        self.matrix[i * self.dim + j]
    }

    /// `W += v v^T`. The upper triangle is computed and mirrored into the
    /// lower triangle so the matrix stays symmetric to the last bit.
    pub fn rank_one_update(&mut self, v: &FeatureVector<S>) -> Result<(), LinalgError> {
        if v.dim() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        let d = self.dim;
        let x = v.as_slice();
        for i in 0..d {
            for j in i..d {
                self.matrix[i * d + j] += x[i] * x[j];
            }
        }
        self.mirror_upper();
        Ok(())
    }

    /// `W += other.W`, ridge unchanged. Used by the server when it folds
    /// agent buffers into the synchronized state.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), LinalgError> {
        if other.dim != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let d = self.dim;
        for i in 0..d {
            for j in i..d {
                self.matrix[i * d + j] += other.matrix[i * d + j];
            }
        }
        self.mirror_upper();
        Ok(())
    }

    /// Same matrix content under a different ridge.
    pub fn with_ridge(&self, ridge: S) -> Self {
        Self {
            dim: self.dim,
            ridge,
            matrix: self.matrix.clone(),
        }
    }

    pub fn reset(&mut self) {
        for x in self.matrix.iter_mut() {
            *x = S::zero();
        }
    }

    fn mirror_upper(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                self.matrix[j * d + i] = self.matrix[i * d + j];
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| self.matrix[i * d + j] == self.matrix[j * d + i]))
    }

    /// Factor `ridge*I + W`.
    pub fn cholesky(&self) -> Result<CholeskyFactor<S>, LinalgError> {
        CholeskyFactor::factor(self)
    }

    /// `log det(ridge*I + W)` as the doubled sum of log pivots.
    pub fn log_det(&self) -> Result<S, LinalgError> {
        Ok(self.cholesky()?.log_det())
    }

    /// Solve `(ridge*I + W) theta = stats` through the Cholesky factor.
    pub fn ridge_solve(
        &self,
        stats: &LinearStatistics<S>,
    ) -> Result<FeatureVector<S>, LinalgError> {
        if stats.dim() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: stats.dim(),
            });
        }
        let factor = self.cholesky()?;
        Ok(FeatureVector::new(factor.solve(stats.as_slice())))
    }

    /// `sqrt(v^T (ridge*I + W)^{-1} v)` via one forward substitution.
    pub fn weighted_norm(&self, v: &FeatureVector<S>) -> Result<S, LinalgError> {
        if v.dim() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        let factor = self.cholesky()?;
        Ok(factor.inv_weighted_norm(v.as_slice()))
    }

    /// `z^T (ridge*I + W) z`, evaluated directly (no factorization).
    pub fn quadratic_form(&self, z: &[S]) -> Result<S, LinalgError> {
        if z.len() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        let d = self.dim;
        let mut total = S::zero();
        for i in 0..d {
            let mut row = S::zero();
            for j in 0..d {
                row += self.matrix[i * d + j] * z[j];
            }
            row += self.ridge * z[i];
            total += z[i] * row;
        }
        Ok(total)
    }
}

/// `log det(now) - log det(then)`, each determinant taken of the ridged
/// matrix and computed from its own Cholesky factorization.
pub fn log_det_ratio<S: Scalar>(
    now: &PsdAccumulator<S>,
    then: &PsdAccumulator<S>,
) -> Result<S, LinalgError> {
    if now.dim() != then.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: now.dim(),
            got: then.dim(),
        });
    }
    Ok(now.log_det()? - then.log_det()?)
}

/// Lower-triangular Cholesky factor `L` of `ridge*I + W = L L^T`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<S: Scalar> {
    dim: usize,
    lower: Vec<S>,
}

impl<S: Scalar> CholeskyFactor<S> {
    fn factor(acc: &PsdAccumulator<S>) -> Result<Self, LinalgError> {
        let d = acc.dim();
        let mut lower = vec![S::zero(); d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut sum = acc.entry(i, j);
                if i == j {
                    sum += acc.ridge();
                }
                for k in 0..j {
                    sum -= lower[i * d + k] * lower[j * d + k];
                }
                if i == j {
                    if sum <= S::zero() || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i });
                    }
                    lower[i * d + j] = sum.sqrt();
                } else {
                    lower[i * d + j] = sum / lower[j * d + j];
                }
            }
        }
        Ok(Self { dim: d, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log det(L L^T) = 2 * sum(log L_ii)`.
    pub fn log_det(&self) -> S {
        let d = self.dim;
        let two = S::constant(2.0);
        (0..d).map(|i| self.lower[i * d + i].ln()).sum::<S>() * two
    }

    /// Forward substitution: solve `L z = b`.
    pub fn forward_solve(&self, b: &[S]) -> Vec<S> {
        let d = self.dim;
        let mut z = vec![S::zero(); d];
        for i in 0..d {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.lower[i * d + k] * z[k];
            }
            z[i] = sum / self.lower[i * d + i];
        }
        z
    }

    /// Solve `L L^T x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let d = self.dim;
        let mut x = self.forward_solve(b);
        for i in (0..d).rev() {
            let mut sum = x[i];
            for k in (i + 1)..d {
                sum -= self.lower[k * d + i] * x[k];
            }
            x[i] = sum / self.lower[i * d + i];
        }
        x
    }

    /// `sqrt(v^T (L L^T)^{-1} v) = ||L^{-1} v||_2`.
    pub fn inv_weighted_norm(&self, v: &[S]) -> S {
        let z = self.forward_solve(v);
        z.iter().map(|&x| x * x).sum::<S>().sqrt()
    }
}
