//! Context distributions and feature maps.
//!
//! A round presents the learner with a distribution `mu` over contexts
//! rather than a context itself. Learning happens on expected feature
//! vectors `psi(x, mu) = E_{c ~ mu}[phi(x, c)]`; the expectation is closed
//! form wherever the map registers one and falls back to a fixed-seed Monte
//! Carlo average otherwise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::FeatureVector;
use crate::scalar::Scalar;
use crate::stream::{self, StreamPurpose};

/// Samples used by the Monte Carlo expectation fallback.
pub const MONTE_CARLO_SAMPLES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("context dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gaussian variance must be nonnegative, got {0}")]
    NegativeVariance(f64),
    #[error("empirical weights must be nonnegative and sum to 1 (sum off by {0:e})")]
    BadWeights(f64),
    #[error("empirical distribution needs at least one point")]
    EmptyEmpirical,
}

/// A sampleable, expectation-queryable distribution over contexts.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextDistribution<S: Scalar> {
    /// Point mass: the context is known exactly. Sampling returns the point
    /// itself, with no noise path involved.
    Dirac(Vec<S>),
    /// Independent Gaussian coordinates.
    Gaussian { mean: Vec<S>, cov_diag: Vec<S> },
    /// Finite support with probability weights.
    Empirical {
        points: Vec<Vec<S>>,
        weights: Vec<S>,
    },
}

impl<S: Scalar> ContextDistribution<S> {
    pub fn gaussian(mean: Vec<S>, cov_diag: Vec<S>) -> Result<Self, ContextError> {
        if mean.len() != cov_diag.len() {
            return Err(ContextError::DimensionMismatch {
                expected: mean.len(),
                got: cov_diag.len(),
            });
        }
        if let Some(v) = cov_diag.iter().find(|v| **v < S::zero()) {
            return Err(ContextError::NegativeVariance(
                v.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(Self::Gaussian { mean, cov_diag })
    }

    pub fn empirical(points: Vec<Vec<S>>, weights: Vec<S>) -> Result<Self, ContextError> {
        if points.is_empty() {
            return Err(ContextError::EmptyEmpirical);
        }
        if points.len() != weights.len() {
            return Err(ContextError::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let sum: S = weights.iter().copied().sum();
        let off = (sum - S::one()).abs();
        if weights.iter().any(|w| *w < S::zero()) || off > S::constant(1e-12) {
            return Err(ContextError::BadWeights(off.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self::Empirical { points, weights })
    }

    pub fn context_dim(&self) -> usize {
        match self {
            Self::Dirac(c) => c.len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Empirical { points, .. } => points[0].len(),
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, Self::Dirac(_))
    }

    /// Draw one context realization.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<S>
    where
        StandardNormal: Distribution<S>,
    {
        match self {
            Self::Dirac(c) => c.clone(),
            Self::Gaussian { mean, cov_diag } => mean
                .iter()
                .zip(cov_diag.iter())
                .map(|(&m, &v)| {
                    let z: S = rng.sample(StandardNormal);
                    m + v.sqrt() * z
                })
                .collect(),
            Self::Empirical { points, weights } => {
                let u: S = S::constant(rng.gen::<f64>());
                let mut acc = S::zero();
                for (p, &w) in points.iter().zip(weights.iter()) {
                    acc += w;
                    if u <= acc {
                        return p.clone();
                    }
                }
                points.last().expect("nonempty").clone()
            }
        }
    }
}

/// A feature map `phi(action, context)` plus optional closed-form Gaussian
/// moments. Maps without a registered closed form are served by the seeded
/// Monte Carlo fallback in [`psi_expected`].
pub trait FeatureMap<S: Scalar>: Send + Sync {
    fn context_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;

    /// Length of the action parameter vectors the map accepts; equals the
    /// context dimension unless a map overrides it.
    fn action_dim(&self) -> usize {
        self.context_dim()
    }

    fn phi(&self, action: &[S], context: &[S]) -> FeatureVector<S>;

    /// Closed-form `E[phi(x, c)]` for `c ~ N(mean, diag(cov))`, if known.
    fn psi_gaussian(
        &self,
        _action: &[S],
        _mean: &[S],
        _cov_diag: &[S],
    ) -> Option<FeatureVector<S>> {
        None
    }
}

/// Quadratic interaction features over equal-dimension actions and contexts:
/// `phi(x, c) = [x_1^2 .. x_n^2, c_1^2 .. c_n^2, x_1 c_1 .. x_n c_n]`,
/// feature dimension `3n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadraticMap {
    pub context_dim: usize,
}

impl<S: Scalar> FeatureMap<S> for QuadraticMap {
    fn context_dim(&self) -> usize {
        self.context_dim
    }

    fn feature_dim(&self) -> usize {
        3 * self.context_dim
    }

    fn phi(&self, action: &[S], context: &[S]) -> FeatureVector<S> {
        let n = self.context_dim;
        assert_eq!(action.len(), n, "action dimension");
        assert_eq!(context.len(), n, "context dimension");
        let mut out = Vec::with_capacity(3 * n);
        out.extend(action.iter().map(|&x| x * x));
        out.extend(context.iter().map(|&c| c * c));
        out.extend(action.iter().zip(context.iter()).map(|(&x, &c)| x * c));
        FeatureVector::new(out)
    }

    // E[c_i^2] = m_i^2 + v_i and E[x_i c_i] = x_i m_i.
    fn psi_gaussian(&self, action: &[S], mean: &[S], cov_diag: &[S]) -> Option<FeatureVector<S>> {
        let n = self.context_dim;
        let mut out = Vec::with_capacity(3 * n);
        out.extend(action.iter().map(|&x| x * x));
        out.extend(mean.iter().zip(cov_diag.iter()).map(|(&m, &v)| m * m + v));
        out.extend(action.iter().zip(mean.iter()).map(|(&x, &m)| x * m));
        Some(FeatureVector::new(out))
    }
}

/// Bilinear features: the context is a user factor `v` in R^k, the action a
/// movie factor `w` in R^k, and `phi = vec(v w^T)` in row-major order,
/// feature dimension `k^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BilinearMap {
    pub rank: usize,
}

impl<S: Scalar> FeatureMap<S> for BilinearMap {
    fn context_dim(&self) -> usize {
        self.rank
    }

    fn feature_dim(&self) -> usize {
        self.rank * self.rank
    }

    fn phi(&self, action: &[S], context: &[S]) -> FeatureVector<S> {
        let k = self.rank;
        assert_eq!(action.len(), k, "action factor dimension");
        assert_eq!(context.len(), k, "context factor dimension");
        let mut out = Vec::with_capacity(k * k);
        for &v in context {
            for &w in action {
                out.push(v * w);
            }
        }
        FeatureVector::new(out)
    }

    // The map is linear in the context, so the expectation is phi at the mean.
    fn psi_gaussian(&self, action: &[S], mean: &[S], _cov_diag: &[S]) -> Option<FeatureVector<S>> {
        Some(self.phi(action, mean))
    }
}

/// Expected feature vector of `action` under `mu`.
///
/// Dirac distributions route straight through `phi` (bitwise identical, no
/// sampling), empirical distributions are exact weighted sums, Gaussians use
/// the map's closed form when registered and otherwise a Monte Carlo average
/// over [`MONTE_CARLO_SAMPLES`] draws from a fixed-seed stream.
pub fn psi_expected<S: Scalar, F: FeatureMap<S> + ?Sized>(
    map: &F,
    action: &[S],
    mu: &ContextDistribution<S>,
) -> FeatureVector<S>
where
    StandardNormal: Distribution<S>,
{
    match mu {
        ContextDistribution::Dirac(c) => map.phi(action, c),
        ContextDistribution::Empirical { points, weights } => {
            let d = map.feature_dim();
            let mut out = vec![S::zero(); d];
            for (p, &w) in points.iter().zip(weights.iter()) {
                let f = map.phi(action, p);
                for (o, &x) in out.iter_mut().zip(f.as_slice()) {
                    *o += w * x;
                }
            }
            FeatureVector::new(out)
        }
        ContextDistribution::Gaussian { mean, cov_diag } => {
            match map.psi_gaussian(action, mean, cov_diag) {
                Some(psi) => psi,
                None => psi_monte_carlo(map, action, mu, MONTE_CARLO_SAMPLES, 0),
            }
        }
    }
}

/// Monte Carlo estimate of `E_{c ~ mu}[phi(x, c)]` from `samples` draws of a
/// stream keyed by `seed`. Exposed so the closed forms can be cross-checked.
pub fn psi_monte_carlo<S: Scalar, F: FeatureMap<S> + ?Sized>(
    map: &F,
    action: &[S],
    mu: &ContextDistribution<S>,
    samples: usize,
    seed: u64,
) -> FeatureVector<S>
where
    StandardNormal: Distribution<S>,
{
    let mut rng = stream::trial_stream(seed, StreamPurpose::MonteCarlo, 0);
    let d = map.feature_dim();
    let mut out = vec![S::zero(); d];
    for _ in 0..samples {
        let c = mu.sample(&mut rng);
        let f = map.phi(action, &c);
        for (o, &x) in out.iter_mut().zip(f.as_slice()) {
            *o += x;
        }
    }
    let inv = S::one() / S::from_count(samples);
    FeatureVector::new(out.into_iter().map(|x| x * inv).collect())
}
