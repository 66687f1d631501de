//! Per-agent learning state: ridge estimate, confidence ellipsoid, and
//! optimistic action selection.
//!
//! Each agent keeps a local sample buffer `(W_loc, U_loc)` accumulated since
//! the last synchronization and a synchronized snapshot `(W_syn, U_syn)`
//! broadcast by the server. The design matrix used everywhere is
//! `V = lambda*I + W_syn + W_loc`.
//!
//! The joint optimistic argmax over (action, parameter-in-ellipsoid) has
//! the closed form `score(x) = <psi_x, theta_hat> + beta * ||psi_x||_{V^-1}`
//! (a linear objective over an ellipsoid peaks on its boundary), so
//! selection is exact in O(K d^2) after one O(d^3) factorization. The
//! maximizing parameter itself is materialized only on request.

use thiserror::Error;

use crate::linalg::{CholeskyFactor, FeatureVector, LinalgError, LinearStatistics, PsdAccumulator};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("confidence level delta must lie in (0, 1], got {0}")]
    DeltaOutOfRange(f64),
    #[error("observed-mode update requires the realized feature vector")]
    MissingRealizedFeature,
}

/// What the agent feeds its sample buffers with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Contexts stay hidden: accumulate expected features `psi`.
    Hidden,
    /// Contexts are revealed after acting: accumulate realized features `phi`.
    Observed,
}

/// Confidence-radius parameters, already specialized to the caller's
/// algorithm: `rho` is the sub-Gaussian width of the effective observation
/// noise and `delta` the (already split) failure probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams<S: Scalar> {
    pub rho: S,
    pub delta: S,
    pub lambda: S,
    /// Known bound on `||theta*||_2`.
    pub param_bound: S,
}

/// beta = rho * sqrt(2 log( det(V)^{1/2} det(lambda I)^{-1/2} / delta ))
///      + sqrt(lambda) * S
///
/// computed from the log-determinant of the ridged Gram matrix.
pub fn confidence_radius<S: Scalar>(
    gram: &PsdAccumulator<S>,
    rho: S,
    delta: S,
    lambda: S,
    param_bound: S,
) -> Result<S, AgentError> {
    if !(delta > S::zero() && delta <= S::one()) {
        return Err(AgentError::DeltaOutOfRange(
            delta.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let factor = gram.cholesky()?;
    Ok(confidence_radius_from_factor(
        &factor,
        rho,
        delta,
        lambda,
        param_bound,
    ))
}

fn confidence_radius_from_factor<S: Scalar>(
    factor: &CholeskyFactor<S>,
    rho: S,
    delta: S,
    lambda: S,
    param_bound: S,
) -> S {
    let two = S::constant(2.0);
    // 2 log(det(V)^{1/2} det(lambda I)^{-1/2} / delta)
    //   = log det V - log det(lambda I) - 2 log delta
    // The reference term replays the factor's own log-det summation on
    // lambda*I so an empty accumulator yields an exact zero ratio.
    let pivot_log = lambda.sqrt().ln();
    let mut reference = S::zero();
    for _ in 0..factor.dim() {
        reference += pivot_log;
    }
    reference *= two;
    let inner = factor.log_det() - reference - two * delta.ln();
    rho * inner.max(S::zero()).sqrt() + lambda.sqrt() * param_bound
}

/// The ellipsoid `{ theta : ||theta_hat - theta||_V <= beta }`.
#[derive(Debug, Clone)]
pub struct ConfidenceEllipsoid<S: Scalar> {
    pub center: FeatureVector<S>,
    pub gram: PsdAccumulator<S>,
    pub radius: S,
}

impl<S: Scalar> ConfidenceEllipsoid<S> {
    /// `||center - theta||_V`.
    pub fn mahalanobis(&self, theta: &FeatureVector<S>) -> Result<S, AgentError> {
        let diff: Vec<S> = self
            .center
            .as_slice()
            .iter()
            .zip(theta.as_slice())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(self.gram.quadratic_form(&diff)?.max(S::zero()).sqrt())
    }

    pub fn contains(&self, theta: &FeatureVector<S>) -> Result<bool, AgentError> {
        Ok(self.mahalanobis(theta)? <= self.radius)
    }
}

#[derive(Debug, Clone)]
pub struct AgentState<S: Scalar> {
    pub id: usize,
    mode: UpdateMode,
    confidence: ConfidenceParams<S>,
    local_gram: PsdAccumulator<S>,
    local_stats: LinearStatistics<S>,
    synced_gram: PsdAccumulator<S>,
    synced_stats: LinearStatistics<S>,
}

/// Per-step numbers a caller may want alongside the chosen action.
#[derive(Debug, Clone, Copy)]
pub struct SelectionReport<S: Scalar> {
    pub action: usize,
    pub ucb_score: S,
    pub beta: S,
    pub log_det: S,
}

impl<S: Scalar> AgentState<S> {
    pub fn new(id: usize, dim: usize, mode: UpdateMode, confidence: ConfidenceParams<S>) -> Self {
        Self {
            id,
            mode,
            confidence,
            // Buffers hold bare sums of outer products; the ridge lives on
            // the composed design matrix.
            local_gram: PsdAccumulator::zeros(dim, S::zero()),
            local_stats: LinearStatistics::zeros(dim),
            synced_gram: PsdAccumulator::zeros(dim, S::zero()),
            synced_stats: LinearStatistics::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.local_gram.dim()
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn confidence(&self) -> ConfidenceParams<S> {
        self.confidence
    }

    pub fn local_gram(&self) -> &PsdAccumulator<S> {
        &self.local_gram
    }

    pub fn local_stats(&self) -> &LinearStatistics<S> {
        &self.local_stats
    }

    pub fn synced_gram(&self) -> &PsdAccumulator<S> {
        &self.synced_gram
    }

    pub fn synced_stats(&self) -> &LinearStatistics<S> {
        &self.synced_stats
    }

    /// `V = lambda*I + W_syn + W_loc`, the design matrix for this agent.
    pub fn total_gram(&self) -> PsdAccumulator<S> {
        let mut total = self.synced_gram.with_ridge(self.confidence.lambda);
        total
            .add_assign(&self.local_gram)
            .expect("buffer dimensions agree by construction");
        total
    }

    fn total_stats(&self) -> LinearStatistics<S> {
        let mut total = self.synced_stats.clone();
        total
            .add_assign(&self.local_stats)
            .expect("buffer dimensions agree by construction");
        total
    }

    /// Ridge estimate and confidence ellipsoid from the current state.
    pub fn ellipsoid(&self) -> Result<ConfidenceEllipsoid<S>, AgentError> {
        let gram = self.total_gram();
        let factor = gram.cholesky()?;
        let center = FeatureVector::new(factor.solve(self.total_stats().as_slice()));
        let radius = self.radius_checked(&factor)?;
        Ok(ConfidenceEllipsoid {
            center,
            gram,
            radius,
        })
    }

    fn radius_checked(&self, factor: &CholeskyFactor<S>) -> Result<S, AgentError> {
        let c = self.confidence;
        if !(c.delta > S::zero() && c.delta <= S::one()) {
            return Err(AgentError::DeltaOutOfRange(
                c.delta.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(confidence_radius_from_factor(
            factor,
            c.rho,
            c.delta,
            c.lambda,
            c.param_bound,
        ))
    }

    /// Optimistic action choice over the expected feature set: maximizes
    /// `<psi_x, theta_hat> + beta ||psi_x||_{V^-1}`; ties go to the lowest
    /// index.
    pub fn select_action(
        &self,
        psi_set: &[FeatureVector<S>],
    ) -> Result<SelectionReport<S>, AgentError> {
        if psi_set.is_empty() {
            return Err(LinalgError::EmptyActionSet.into());
        }
        let gram = self.total_gram();
        let factor = gram.cholesky()?;
        let beta = self.radius_checked(&factor)?;
        let theta_hat = FeatureVector::new(factor.solve(self.total_stats().as_slice()));
        let mut best = 0;
        let mut best_score = S::neg_infinity();
        for (k, psi) in psi_set.iter().enumerate() {
            let score = psi.dot(&theta_hat) + beta * factor.inv_weighted_norm(psi.as_slice());
            if score > best_score {
                best = k;
                best_score = score;
            }
        }
        Ok(SelectionReport {
            action: best,
            ucb_score: best_score,
            beta,
            log_det: factor.log_det(),
        })
    }

    /// The parameter attaining the UCB score for `psi`:
    /// `theta_hat + beta * V^{-1} psi / ||psi||_{V^-1}`.
    pub fn optimistic_theta(&self, psi: &FeatureVector<S>) -> Result<FeatureVector<S>, AgentError> {
        let gram = self.total_gram();
        let factor = gram.cholesky()?;
        let beta = self.radius_checked(&factor)?;
        let theta_hat = FeatureVector::new(factor.solve(self.total_stats().as_slice()));
        let weighted = factor.inv_weighted_norm(psi.as_slice());
        if weighted.is_zero() {
            return Ok(theta_hat);
        }
        let direction = FeatureVector::new(factor.solve(psi.as_slice()));
        Ok(theta_hat.axpy(beta / weighted, &direction))
    }

    /// Fold one observation into the local buffers. Hidden mode accumulates
    /// the expected feature `psi`; observed mode requires and accumulates
    /// the realized feature.
    pub fn local_update(
        &mut self,
        psi: &FeatureVector<S>,
        phi_realized: Option<&FeatureVector<S>>,
        reward: S,
    ) -> Result<(), AgentError> {
        let feature = match self.mode {
            UpdateMode::Hidden => psi,
            UpdateMode::Observed => phi_realized.ok_or(AgentError::MissingRealizedFeature)?,
        };
        self.local_gram.rank_one_update(feature)?;
        self.local_stats.accumulate(feature, reward)?;
        Ok(())
    }

    /// Receive the server broadcast: replace the synchronized snapshot and
    /// clear the local buffers.
    pub fn absorb_sync(
        &mut self,
        w_syn: &PsdAccumulator<S>,
        u_syn: &LinearStatistics<S>,
    ) -> Result<(), AgentError> {
        if w_syn.dim() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim(),
                got: w_syn.dim(),
            }
            .into());
        }
        self.synced_gram = w_syn.with_ridge(S::zero());
        self.synced_stats = u_syn.clone();
        self.local_gram.reset();
        self.local_stats.reset();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(entries: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(entries.to_vec())
    }

    fn params(rho: f64, delta: f64, lambda: f64, s: f64) -> ConfidenceParams<f64> {
        ConfidenceParams {
            rho,
            delta,
            lambda,
            param_bound: s,
        }
    }

    #[test]
    fn radius_closed_form_with_empty_gram() {
        let gram = PsdAccumulator::zeros(1, 1.0);
        let beta = confidence_radius(&gram, 1.0, 0.1, 1.0, 1.0).unwrap();
        let want = (2.0 * 10.0f64.ln()).sqrt() + 1.0;
        assert!((beta - want).abs() < 1e-10, "beta {beta} want {want}");
        assert!((beta - 3.1460).abs() < 5e-4);
    }

    #[test]
    fn radius_with_delta_one_is_pure_param_term() {
        let gram = PsdAccumulator::zeros(4, 2.0);
        let beta = confidence_radius(&gram, 123.0, 1.0, 2.0, 3.0).unwrap();
        assert_eq!(beta, 2.0f64.sqrt() * 3.0);
    }

    #[test]
    fn radius_scalar_log_det_case() {
        let mut gram = PsdAccumulator::zeros(1, 1.0);
        gram.rank_one_update(&fv(&[3.0f64.sqrt()])).unwrap();
        let beta = confidence_radius(&gram, 1.0, 0.5, 1.0, 0.0).unwrap();
        let want = (2.0 * 4.0f64.ln()).sqrt();
        assert!((beta - want).abs() < 1e-10);
        assert!((beta - 1.6651).abs() < 5e-4);
    }

    #[test]
    fn radius_rejects_delta_out_of_range() {
        let gram = PsdAccumulator::zeros(2, 1.0);
        assert!(matches!(
            confidence_radius(&gram, 1.0, 0.0, 1.0, 1.0),
            Err(AgentError::DeltaOutOfRange(_))
        ));
        assert!(matches!(
            confidence_radius(&gram, 1.0, 1.5, 1.0, 1.0),
            Err(AgentError::DeltaOutOfRange(_))
        ));
    }

    #[test]
    fn single_action_is_always_selected() {
        let agent = AgentState::new(0, 3, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        let report = agent.select_action(&[fv(&[1.0, 0.0, 0.0])]).unwrap();
        assert_eq!(report.action, 0);
    }

    #[test]
    fn empty_action_set_is_an_error() {
        let agent = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        assert!(matches!(
            agent.select_action(&[]),
            Err(AgentError::Linalg(LinalgError::EmptyActionSet))
        ));
    }

    #[test]
    fn zero_radius_reduces_to_greedy() {
        // rho = 0, delta = 1, S = 0 force beta = 0.
        let mut agent = AgentState::new(0, 1, UpdateMode::Hidden, params(0.0, 1.0, 1.0, 0.0));
        agent.local_update(&fv(&[1.0]), None, 2.0).unwrap();
        // theta_hat = 2/(1+1) = 1; greedy picks the larger psi.
        let report = agent.select_action(&[fv(&[0.5]), fv(&[1.0])]).unwrap();
        assert_eq!(report.action, 1);
        assert!((report.ucb_score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_scores_pick_action_zero() {
        // d=1, lambda=1, W=0, theta_hat = 1 via U=1, beta = 1 via delta=1, S=1.
        let mut agent = AgentState::new(0, 1, UpdateMode::Hidden, params(1.0, 1.0, 1.0, 1.0));
        // One update with psi=1, y=1 gives W=1, U=1 -> V=2, theta_hat=0.5.
        // To get theta_hat = 1 with W=0 instead, write U directly through a
        // synced snapshot: W_syn = 0, U_syn = 1.
        let w = PsdAccumulator::zeros(1, 0.0);
        let u = LinearStatistics::from_vec(vec![1.0]);
        agent.absorb_sync(&w, &u).unwrap();
        let report = agent.select_action(&[fv(&[1.0]), fv(&[0.5])]).unwrap();
        // scores: 1*1 + 1*1 = 2 and 0.5 + 0.5 = 1
        assert_eq!(report.action, 0);
        assert!((report.ucb_score - 2.0).abs() < 1e-12);
        assert!((report.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_tie_goes_to_lowest_index() {
        let agent = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        let psi = fv(&[0.7, -0.1]);
        let report = agent.select_action(&[psi.clone(), psi]).unwrap();
        assert_eq!(report.action, 0);
    }

    #[test]
    fn optimistic_theta_attains_the_ucb_score() {
        let mut agent = AgentState::new(0, 3, UpdateMode::Hidden, params(1.3, 0.05, 1.0, 0.8));
        for (v, y) in [
            ([1.0, 0.2, -0.5], 0.7),
            ([0.1, -1.0, 0.4], -0.2),
            ([0.9, 0.9, 0.9], 1.1),
        ] {
            agent.local_update(&fv(&v), None, y).unwrap();
        }
        let psi = fv(&[0.5, -0.3, 0.8]);
        let report = agent.select_action(std::slice::from_ref(&psi)).unwrap();
        let tilde = agent.optimistic_theta(&psi).unwrap();
        // The optimistic parameter reproduces the score and sits on the
        // ellipsoid boundary.
        assert!((psi.dot(&tilde) - report.ucb_score).abs() < 1e-10);
        let ell = agent.ellipsoid().unwrap();
        let dist = ell.mahalanobis(&tilde).unwrap();
        assert!(
            (dist - ell.radius).abs() < 1e-8,
            "dist {dist} radius {}",
            ell.radius
        );
    }

    #[test]
    fn hidden_update_accumulates_psi_outer_product() {
        let mut agent = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        agent.local_update(&fv(&[1.0, 0.0]), None, 2.0).unwrap();
        assert_eq!(agent.local_gram().matrix(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(agent.local_stats().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn zero_sample_leaves_state_unchanged() {
        let mut agent = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        let before = agent.clone();
        agent.local_update(&fv(&[0.0, 0.0]), None, 0.0).unwrap();
        assert_eq!(agent.local_gram(), before.local_gram());
        assert_eq!(agent.local_stats(), before.local_stats());
    }

    #[test]
    fn observed_update_without_realized_feature_is_an_error() {
        let mut agent = AgentState::new(0, 2, UpdateMode::Observed, params(1.0, 0.5, 1.0, 1.0));
        assert!(matches!(
            agent.local_update(&fv(&[1.0, 0.0]), None, 1.0),
            Err(AgentError::MissingRealizedFeature)
        ));
    }

    #[test]
    fn observed_update_uses_the_realized_feature() {
        let mut hidden = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        let mut observed = AgentState::new(1, 2, UpdateMode::Observed, params(1.0, 0.5, 1.0, 1.0));
        let shared = fv(&[0.3, -0.4]);
        hidden.local_update(&shared, None, 1.5).unwrap();
        observed.local_update(&shared, Some(&shared), 1.5).unwrap();
        // Identical features imply identical resulting buffers.
        assert_eq!(hidden.local_gram(), observed.local_gram());
        assert_eq!(hidden.local_stats(), observed.local_stats());
    }

    #[test]
    fn absorb_sync_zeroes_local_buffers_and_installs_snapshot() {
        let mut agent = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        agent.local_update(&fv(&[1.0, 2.0]), None, 3.0).unwrap();
        let mut w = PsdAccumulator::zeros(2, 0.0);
        w.rank_one_update(&fv(&[2.0, 0.0])).unwrap();
        let u = LinearStatistics::from_vec(vec![4.0, 0.0]);
        agent.absorb_sync(&w, &u).unwrap();
        assert!(agent.local_gram().matrix().iter().all(|&x| x == 0.0));
        assert!(agent.local_stats().as_slice().iter().all(|&x| x == 0.0));
        // V = lambda I + W_syn exactly after a sync.
        let total = agent.total_gram();
        assert_eq!(total.ridge(), 1.0);
        assert_eq!(total.matrix(), w.matrix());
    }

    #[test]
    fn absorb_of_zeros_resets_everything() {
        let mut agent = AgentState::new(0, 2, UpdateMode::Hidden, params(1.0, 0.5, 1.0, 1.0));
        agent.local_update(&fv(&[1.0, 2.0]), None, 3.0).unwrap();
        agent
            .absorb_sync(&PsdAccumulator::zeros(2, 0.0), &LinearStatistics::zeros(2))
            .unwrap();
        assert!(agent.total_gram().matrix().iter().all(|&x| x == 0.0));
        assert!(agent.synced_stats().as_slice().iter().all(|&x| x == 0.0));
    }
}
