//! Simulation environments: action sets, reward parameters, context
//! processes, and reward normalization.
//!
//! An environment owns the ground truth `theta*`, a feature map, and a
//! per-round context process. Raw expected rewards are normalized at
//! construction by probing a seeded grid of (action, context) pairs and
//! affinely mapping the observed [min, max] onto [0, 1]. The affine map is
//! folded into the linear model itself — the gain rescales `theta*` and the
//! offset becomes a constant feature shift along the raw parameter
//! direction — so rewards keep the exact inner-product form.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::contexts::{psi_expected, BilinearMap, ContextDistribution, FeatureMap, QuadraticMap};
use crate::linalg::FeatureVector;
use crate::scalar::Scalar;
use crate::stream::{self, StreamPurpose};

/// Pairs probed at construction to calibrate the reward normalization.
pub const SCALE_PROBE_PAIRS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("user factors have rank {user_rank} but movie factors have rank {movie_rank}")]
    FactorRankMismatch { user_rank: usize, movie_rank: usize },
    #[error("environment needs at least one {0}")]
    Empty(&'static str),
    #[error("{what} has dimension {got}, the feature map wants {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Affine reward normalization `r_scaled = gain * r_raw + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScale<S: Scalar> {
    pub gain: S,
    pub offset: S,
}

impl<S: Scalar> RewardScale<S> {
    pub fn identity() -> Self {
        Self {
            gain: S::one(),
            offset: S::zero(),
        }
    }
}

/// How contexts and their distributions evolve round to round.
#[derive(Clone)]
pub enum ContextProcess<S: Scalar> {
    /// Per round, a fresh mean `z ~ N(0, I_n)` announces `mu = N(z, cov)`
    /// and the realized context is drawn from `mu`. A zero covariance
    /// degenerates to an exactly announced context `mu = Dirac(z)`.
    GaussianDrift { cov_diag: Vec<S> },
    /// Per round, a uniformly drawn user: the realized context is the
    /// user's true factor vector and agents observe a point mass on a
    /// perturbed copy of it.
    UserPool {
        true_factors: Vec<Vec<S>>,
        observed_factors: Vec<Vec<S>>,
    },
}

impl<S: Scalar> ContextProcess<S> {
    /// Whether the announced distribution pins the realized context exactly
    /// every round. When it does, the learner faces no context uncertainty
    /// and the confidence machinery reduces to the exact-context baseline.
    pub fn exactly_observed(&self) -> bool {
        match self {
            Self::GaussianDrift { cov_diag } => cov_diag.iter().all(|v| v.is_zero()),
            Self::UserPool {
                true_factors,
                observed_factors,
            } => true_factors == observed_factors,
        }
    }
}

/// One round's context draw.
#[derive(Debug, Clone)]
pub struct RoundObservation<S: Scalar> {
    /// The distribution nature generated the context from; the regret
    /// benchmark optimizes against this one in every observation mode.
    pub oracle_mu: ContextDistribution<S>,
    /// The distribution shown to agents (before any mode transform).
    pub observed_mu: ContextDistribution<S>,
    /// The realized context, hidden from agents at selection time.
    pub realized: Vec<S>,
}

pub struct Environment<S: Scalar> {
    map: Arc<dyn FeatureMap<S>>,
    actions: Vec<Vec<S>>,
    theta_star: FeatureVector<S>,
    feature_shift: FeatureVector<S>,
    noise_sigma: S,
    scale: RewardScale<S>,
    process: ContextProcess<S>,
    feature_norm_bound: Option<S>,
}

impl<S: Scalar> Environment<S>
where
    StandardNormal: Distribution<S>,
{
    pub fn new(
        map: Arc<dyn FeatureMap<S>>,
        actions: Vec<Vec<S>>,
        theta_raw: Vec<S>,
        noise_sigma: S,
        scale: RewardScale<S>,
        process: ContextProcess<S>,
    ) -> Result<Self, EnvError> {
        if actions.is_empty() {
            return Err(EnvError::Empty("action"));
        }
        let d = map.feature_dim();
        if theta_raw.len() != d {
            return Err(EnvError::Dimension {
                what: "reward parameter",
                expected: d,
                got: theta_raw.len(),
            });
        }
        if let Some(bad) = actions.iter().find(|a| a.len() != map.action_dim()) {
            return Err(EnvError::Dimension {
                what: "action vector",
                expected: map.action_dim(),
                got: bad.len(),
            });
        }
        let theta_raw = FeatureVector::new(theta_raw);
        // Fold the affine normalization into the model: the gain rescales
        // theta*, the offset becomes a constant shift of every feature
        // along theta_raw, so <theta*, phi> = gain * r_raw + offset holds
        // exactly.
        let theta_star = theta_raw.scaled(scale.gain);
        let shift = if scale.offset.is_zero() {
            FeatureVector::zeros(d)
        } else {
            let denom = scale.gain * theta_raw.dot(&theta_raw);
            theta_raw.scaled(scale.offset / denom)
        };
        Ok(Self {
            map,
            actions,
            theta_star,
            feature_shift: shift,
            noise_sigma,
            scale,
            process,
            feature_norm_bound: None,
        })
    }

    /// Record the largest raw feature norm seen while probing; the stored
    /// bound covers the shifted features the environment hands out.
    pub fn with_probed_feature_norm(mut self, max_raw_norm: S) -> Self {
        self.feature_norm_bound = Some(max_raw_norm + self.feature_shift.norm());
        self
    }

    /// Probed bound `D` with `||phi|| <= D` across the calibration grid.
    pub fn feature_norm_bound(&self) -> Option<S> {
        self.feature_norm_bound
    }

    pub fn feature_dim(&self) -> usize {
        self.map.feature_dim()
    }

    pub fn context_dim(&self) -> usize {
        self.map.context_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, k: usize) -> &[S] {
        &self.actions[k]
    }

    pub fn theta_star(&self) -> &FeatureVector<S> {
        &self.theta_star
    }

    /// Default confidence-set norm bound: `||theta*||_2`.
    pub fn param_norm_bound(&self) -> S {
        self.theta_star.norm()
    }

    pub fn noise_sigma(&self) -> S {
        self.noise_sigma
    }

    pub fn reward_scale(&self) -> RewardScale<S> {
        self.scale
    }

    pub fn process(&self) -> &ContextProcess<S> {
        &self.process
    }

    pub fn exactly_observed(&self) -> bool {
        self.process.exactly_observed()
    }

    /// Realized feature vector of action `k` at a context.
    pub fn phi(&self, k: usize, context: &[S]) -> FeatureVector<S> {
        self.map
            .phi(&self.actions[k], context)
            .axpy(S::one(), &self.feature_shift)
    }

    /// Expected feature vector of action `k` under `mu`.
    pub fn psi(&self, k: usize, mu: &ContextDistribution<S>) -> FeatureVector<S> {
        psi_expected(self.map.as_ref(), &self.actions[k], mu).axpy(S::one(), &self.feature_shift)
    }

    /// Expected features of the whole action set under `mu`.
    pub fn psi_set(&self, mu: &ContextDistribution<S>) -> Vec<FeatureVector<S>> {
        (0..self.num_actions()).map(|k| self.psi(k, mu)).collect()
    }

    pub fn expected_reward(&self, k: usize, context: &[S]) -> S {
        self.phi(k, context).dot(&self.theta_star)
    }

    /// Reward observation per the linear model: `<theta*, phi> + eta` with
    /// `eta ~ N(0, sigma^2)`.
    pub fn draw_reward<R: Rng>(&self, k: usize, context: &[S], rng: &mut R) -> S {
        let eta: S = rng.sample(StandardNormal);
        self.expected_reward(k, context) + self.noise_sigma * eta
    }

    /// Index of the action maximizing expected reward under `mu`; ties go
    /// to the lowest index. Oracle use only (needs `theta*`).
    pub fn best_action(&self, mu: &ContextDistribution<S>) -> usize {
        self.best_action_from_psi(&self.psi_set(mu))
    }

    pub fn best_action_from_psi(&self, psi_set: &[FeatureVector<S>]) -> usize {
        let mut best = 0;
        let mut best_score = psi_set[0].dot(&self.theta_star);
        for (k, psi) in psi_set.iter().enumerate().skip(1) {
            let score = psi.dot(&self.theta_star);
            if score > best_score {
                best = k;
                best_score = score;
            }
        }
        best
    }

    /// Draw one round: nature picks the distribution and samples the
    /// realized context from it, once, shared by all agents.
    pub fn draw_round<R: Rng>(&self, rng: &mut R) -> RoundObservation<S> {
        match &self.process {
            ContextProcess::GaussianDrift { cov_diag } => {
                let n = self.context_dim();
                let mean: Vec<S> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                if cov_diag.iter().all(|v| v.is_zero()) {
                    let mu = ContextDistribution::Dirac(mean.clone());
                    RoundObservation {
                        oracle_mu: mu.clone(),
                        observed_mu: mu,
                        realized: mean,
                    }
                } else {
                    let mu = ContextDistribution::Gaussian {
                        mean,
                        cov_diag: cov_diag.clone(),
                    };
                    let realized = mu.sample(rng);
                    RoundObservation {
                        oracle_mu: mu.clone(),
                        observed_mu: mu,
                        realized,
                    }
                }
            }
            ContextProcess::UserPool {
                true_factors,
                observed_factors,
            } => {
                let u = rng.gen_range(0..true_factors.len());
                RoundObservation {
                    oracle_mu: ContextDistribution::Dirac(true_factors[u].clone()),
                    observed_mu: ContextDistribution::Dirac(observed_factors[u].clone()),
                    realized: true_factors[u].clone(),
                }
            }
        }
    }
}

/// Synthetic quadratic benchmark configuration.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub context_dim: usize,
    pub num_actions: usize,
    pub context_var: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            context_dim: 5,
            num_actions: 20,
            context_var: 1.0,
            noise_sigma: 1e-3,
        }
    }
}

impl SyntheticConfig {
    /// Build the quadratic environment: `num_actions` actions drawn from a
    /// standard Gaussian, reward `sum_i (x_i - c_i)^2` before normalization,
    /// per-round `mu = N(z, context_var * I)` with `z ~ N(0, I)`.
    pub fn build<S: Scalar>(self, seed: u64) -> Environment<S>
    where
        StandardNormal: Distribution<S>,
    {
        let n = self.context_dim;
        let map = QuadraticMap { context_dim: n };
        let mut action_rng = stream::trial_stream(seed, StreamPurpose::Environment, 0);
        let actions: Vec<Vec<S>> = (0..self.num_actions)
            .map(|_| (0..n).map(|_| action_rng.sample(StandardNormal)).collect())
            .collect();
        // theta_raw makes <theta, phi> = sum (x_i - c_i)^2.
        let mut theta_raw = vec![S::one(); 2 * n];
        theta_raw.extend(vec![S::constant(-2.0); n]);
        let process = ContextProcess::GaussianDrift {
            cov_diag: vec![S::constant(self.context_var); n],
        };
        let probe = probe_calibration(seed, &map, &actions, &theta_raw, &process);
        Environment::new(
            Arc::new(map),
            actions,
            theta_raw,
            S::constant(self.noise_sigma),
            probe.scale,
            process,
        )
        .expect("synthetic environment is well formed")
        .with_probed_feature_norm(probe.max_feature_norm)
    }
}

/// The quadratic synthetic environment with its standard dimensions
/// (n = 5, d = 15, K = 20, sigma = 1e-3).
pub fn make_synthetic_env<S: Scalar>(seed: u64) -> Environment<S>
where
    StandardNormal: Distribution<S>,
{
    SyntheticConfig::default().build(seed)
}

/// Bilinear rating environment from factor matrices: movies are actions,
/// users are contexts, `phi = vec(v_u w_m^T)` with `theta* = vec(I)` so the
/// expected raw reward is the factorized rating prediction `v_u . w_m`.
/// Agents observe a point mass on a noise-perturbed user factor (scale
/// `noise_level`, fixed per user at construction).
pub fn make_bilinear_env<S: Scalar>(
    user_factors: Vec<Vec<S>>,
    movie_factors: Vec<Vec<S>>,
    noise_level: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Environment<S>, EnvError>
where
    StandardNormal: Distribution<S>,
{
    if user_factors.is_empty() {
        return Err(EnvError::Empty("user factor"));
    }
    if movie_factors.is_empty() {
        return Err(EnvError::Empty("movie factor"));
    }
    let k = user_factors[0].len();
    if movie_factors.iter().any(|w| w.len() != k) || user_factors.iter().any(|v| v.len() != k) {
        return Err(EnvError::FactorRankMismatch {
            user_rank: k,
            movie_rank: movie_factors
                .iter()
                .map(|w| w.len())
                .find(|&len| len != k)
                .unwrap_or(k),
        });
    }
    let map = BilinearMap { rank: k };
    let mut theta_raw = vec![S::zero(); k * k];
    for i in 0..k {
        theta_raw[i * k + i] = S::one();
    }
    let mut perturb_rng = stream::trial_stream(seed, StreamPurpose::Environment, 2);
    let level = S::constant(noise_level);
    let observed_factors: Vec<Vec<S>> = user_factors
        .iter()
        .map(|v| {
            v.iter()
                .map(|&x| {
                    let z: S = perturb_rng.sample(StandardNormal);
                    x + level * z
                })
                .collect()
        })
        .collect();
    let process = ContextProcess::UserPool {
        true_factors: user_factors,
        observed_factors,
    };
    let probe = probe_calibration(seed, &map, &movie_factors, &theta_raw, &process);
    Ok(Environment::new(
        Arc::new(map),
        movie_factors,
        theta_raw,
        S::constant(noise_sigma),
        probe.scale,
        process,
    )?
    .with_probed_feature_norm(probe.max_feature_norm))
}

/// What the calibration probe measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeCalibration<S: Scalar> {
    pub scale: RewardScale<S>,
    /// Largest raw feature norm across the probed pairs.
    pub max_feature_norm: S,
}

/// Probe a seeded grid of (action, realized context) pairs. Returns the
/// affine map sending the observed raw expected-reward range onto [0, 1]
/// together with the largest raw feature norm encountered.
pub fn probe_calibration<S: Scalar, F: FeatureMap<S>>(
    seed: u64,
    map: &F,
    actions: &[Vec<S>],
    theta_raw: &[S],
    process: &ContextProcess<S>,
) -> ProbeCalibration<S>
where
    StandardNormal: Distribution<S>,
{
    let theta = FeatureVector::new(theta_raw.to_vec());
    let mut rng = stream::trial_stream(seed, StreamPurpose::Environment, 1);
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    let mut max_norm = S::zero();
    for _ in 0..SCALE_PROBE_PAIRS {
        let k = rng.gen_range(0..actions.len());
        let context = match process {
            ContextProcess::GaussianDrift { cov_diag } => {
                let n = cov_diag.len();
                let mean: Vec<S> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                mean.iter()
                    .zip(cov_diag.iter())
                    .map(|(&m, &v)| {
                        let z: S = rng.sample(StandardNormal);
                        m + v.sqrt() * z
                    })
                    .collect()
            }
            ContextProcess::UserPool { true_factors, .. } => {
                true_factors[rng.gen_range(0..true_factors.len())].clone()
            }
        };
        let phi = map.phi(&actions[k], &context);
        let r = phi.dot(&theta);
        if r < lo {
            lo = r;
        }
        if r > hi {
            hi = r;
        }
        max_norm = max_norm.max(phi.norm());
    }
    let span = hi - lo;
    let scale = if span > S::constant(1e-12) {
        let gain = S::one() / span;
        RewardScale {
            gain,
            offset: -lo * gain,
        }
    } else {
        RewardScale::identity()
    };
    ProbeCalibration {
        scale,
        max_feature_norm: max_norm,
    }
}
