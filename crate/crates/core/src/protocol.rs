//! Server-side synchronization: the event-triggered protocol, the
//! immediate-sharing baseline, and communication metering.
//!
//! The event trigger fires for agent i at round t when
//! `log(det(V_{t,i}) / det(V_last)) * (t - t_last) >= B`. Triggers are
//! evaluated after all agents finish the round (one barrier per round), and
//! at most one synchronization round runs at the end of a round, so results
//! do not depend on the order agents execute in.
//!
//! Communication is metered in scalars: a Gram matrix costs d^2 (symmetry
//! is not exploited on the wire), a statistics vector d, and each
//! synchronization round carries one integer signal.

use thiserror::Error;

use crate::agent::AgentState;
use crate::linalg::{LinalgError, LinearStatistics, PsdAccumulator};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which communication scheme a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Synchronize only when the log-det trigger fires.
    EventTriggered,
    /// Relay every sample to every peer at the end of every round.
    ImmediateSharing,
    /// Never communicate (the event trigger with an infinite threshold).
    NoCommunication,
}

/// Scalar counters for everything that crossed the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommMeter {
    pub scalars_up: u64,
    pub scalars_down: u64,
    pub signals: u64,
}

impl CommMeter {
    pub fn total(&self) -> u64 {
        self.scalars_up + self.scalars_down + self.signals
    }
}

/// Server state for the event-triggered protocol.
#[derive(Debug, Clone)]
pub struct SyncProtocolState<S: Scalar> {
    pub t_last: usize,
    pub epoch_count: u64,
    pub threshold_b: S,
    w_syn: PsdAccumulator<S>,
    u_syn: LinearStatistics<S>,
    v_last: PsdAccumulator<S>,
    v_last_log_det: S,
}

impl<S: Scalar> SyncProtocolState<S> {
    /// Fresh server state: `W_syn = 0`, `U_syn = 0`, `V_last = lambda I`.
    pub fn new(dim: usize, lambda: S, threshold_b: S) -> Self {
        let v_last = PsdAccumulator::zeros(dim, lambda);
        let v_last_log_det = S::from_count(dim) * lambda.ln();
        Self {
            t_last: 0,
            epoch_count: 0,
            threshold_b,
            w_syn: PsdAccumulator::zeros(dim, S::zero()),
            u_syn: LinearStatistics::zeros(dim),
            v_last,
            v_last_log_det,
        }
    }

    pub fn w_syn(&self) -> &PsdAccumulator<S> {
        &self.w_syn
    }

    pub fn u_syn(&self) -> &LinearStatistics<S> {
        &self.u_syn
    }

    pub fn v_last(&self) -> &PsdAccumulator<S> {
        &self.v_last
    }
}

/// Trigger predicate for one agent's current design matrix.
pub fn trigger_check<S: Scalar>(
    agent_gram_total: &PsdAccumulator<S>,
    proto: &SyncProtocolState<S>,
    t: usize,
) -> Result<bool, ProtocolError> {
    debug_assert!(t >= proto.t_last);
    let ratio = agent_gram_total.log_det()? - proto.v_last_log_det;
    let elapsed = S::from_count(t - proto.t_last);
    Ok(ratio * elapsed >= proto.threshold_b)
}

/// Default trigger threshold `B = T log(M T) / (d M)` (natural log).
pub fn default_b<S: Scalar>(horizon: usize, agents: usize, dim: usize) -> S {
    let t = S::from_count(horizon);
    let m = S::from_count(agents);
    let d = S::from_count(dim);
    t * (m * t).ln() / (d * m)
}

/// Analytic ceiling on the number of epochs the event-triggered protocol
/// can produce: `2 * ceil(sqrt(T R / B))` with
/// `R = ceil(d log(1 + M T / (lambda d)))`, each ceiling at least one.
pub fn epoch_bound<S: Scalar>(horizon: usize, agents: usize, dim: usize, b: S, lambda: S) -> u64 {
    let t = S::from_count(horizon);
    let m = S::from_count(agents);
    let d = S::from_count(dim);
    let r = (d * (S::one() + m * t / (lambda * d)).ln()).ceil();
    let per_kind = (t * r / b).sqrt().ceil().max(S::one());
    per_kind.to_u64().unwrap_or(u64::MAX).saturating_mul(2)
}

/// One synchronization round: agents upload their buffers, the server folds
/// them into the synchronized state, broadcasts it, agents reset, and the
/// meter is charged `d^2 + d` scalars per agent in each direction plus one
/// signal.
pub fn run_sync_round<S: Scalar>(
    agents: &mut [AgentState<S>],
    proto: &mut SyncProtocolState<S>,
    meter: &mut CommMeter,
    t: usize,
) -> Result<(), ProtocolError> {
    let d = proto.w_syn.dim() as u64;
    let m = agents.len() as u64;
    for agent in agents.iter() {
        proto.w_syn.add_assign(agent.local_gram())?;
        proto.u_syn.add_assign(agent.local_stats())?;
    }
    for agent in agents.iter_mut() {
        agent
            .absorb_sync(&proto.w_syn, &proto.u_syn)
            .map_err(|e| match e {
                crate::agent::AgentError::Linalg(l) => ProtocolError::Linalg(l),
                other => panic!("sync broadcast failed: {other}"),
            })?;
    }
    proto.t_last = t;
    let lambda = proto.v_last.ridge();
    proto.v_last = proto.w_syn.with_ridge(lambda);
    proto.v_last_log_det = proto.v_last.log_det()?;
    proto.epoch_count += 1;
    meter.scalars_up += m * (d * d + d);
    meter.scalars_down += m * (d * d + d);
    meter.signals += 1;
    Ok(())
}

/// One round of the immediate-sharing baseline: every agent's fresh sample
/// is relayed through the server to all peers. Costs `M (d + 1)` scalars up
/// and `M (M - 1) (d + 1)` down per round; after the relay all agents hold
/// the full sample pool and local buffers are empty.
pub fn run_immediate_sharing_round<S: Scalar>(
    agents: &mut [AgentState<S>],
    proto: &mut SyncProtocolState<S>,
    meter: &mut CommMeter,
    t: usize,
) -> Result<(), ProtocolError> {
    let d = proto.w_syn.dim() as u64;
    let m = agents.len() as u64;
    for agent in agents.iter() {
        proto.w_syn.add_assign(agent.local_gram())?;
        proto.u_syn.add_assign(agent.local_stats())?;
    }
    for agent in agents.iter_mut() {
        agent
            .absorb_sync(&proto.w_syn, &proto.u_syn)
            .map_err(|e| match e {
                crate::agent::AgentError::Linalg(l) => ProtocolError::Linalg(l),
                other => panic!("relay broadcast failed: {other}"),
            })?;
    }
    proto.t_last = t;
    proto.epoch_count += 1;
    meter.scalars_up += m * (d + 1);
    meter.scalars_down += m * (m - 1) * (d + 1);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ConfidenceParams, UpdateMode};
    use crate::linalg::FeatureVector;

    fn agent(dim: usize, id: usize) -> AgentState<f64> {
        AgentState::new(
            id,
            dim,
            UpdateMode::Hidden,
            ConfidenceParams {
                rho: 1.0,
                delta: 0.5,
                lambda: 1.0,
                param_bound: 1.0,
            },
        )
    }

    #[test]
    fn trigger_is_false_without_new_data() {
        let proto = SyncProtocolState::new(3, 1.0, 0.5);
        let a = agent(3, 0);
        // log ratio is exactly 0, elapsed arbitrary
        assert!(!trigger_check(&a.total_gram(), &proto, 10).unwrap());
    }

    #[test]
    fn trigger_scalar_determinant_case() {
        // d=1, lambda=1, V_last = 1; current V = e^2; elapsed 3; B = 5.
        let mut proto = SyncProtocolState::new(1, 1.0, 5.0);
        proto.t_last = 0;
        let mut a = agent(1, 0);
        let bump = (std::f64::consts::E * std::f64::consts::E - 1.0).sqrt();
        a.local_update(&FeatureVector::new(vec![bump]), None, 0.0)
            .unwrap();
        // log ratio = 2, 2 * 3 = 6 >= 5
        assert!(trigger_check(&a.total_gram(), &proto, 3).unwrap());
        proto.threshold_b = 6.5;
        assert!(!trigger_check(&a.total_gram(), &proto, 3).unwrap());
    }

    #[test]
    fn infinite_threshold_never_triggers() {
        let proto = SyncProtocolState::new(2, 1.0, f64::INFINITY);
        let mut a = agent(2, 0);
        for _ in 0..100 {
            a.local_update(&FeatureVector::new(vec![1.0, 2.0]), None, 1.0)
                .unwrap();
        }
        assert!(!trigger_check(&a.total_gram(), &proto, 1000).unwrap());
    }

    #[test]
    fn default_b_reference_values() {
        let b: f64 = default_b(1000, 3, 15);
        assert!((b - 1000.0 * 3000.0f64.ln() / 45.0).abs() < 1e-9);
        assert!((b - 177.9193).abs() < 1e-3, "b = {b}");
        // T = e, M = 1, d = 1 gives exactly e.
        let b2: f64 = default_b(1, 1, 1); // ln(1) = 0 edge: B = 0
        assert_eq!(b2, 0.0);
        // doubling d halves B
        let b3: f64 = default_b(1000, 3, 30);
        assert!((b3 * 2.0 - b).abs() < 1e-9);
    }

    #[test]
    fn epoch_bound_reference_values() {
        let b: f64 = default_b(1000, 3, 15);
        // R = ceil(15 ln 201) = 80; 2 * ceil(sqrt(1000 * 80 / B)) = 44.
        assert_eq!(epoch_bound(1000, 3, 15, b, 1.0), 44);
        // B -> infinity collapses the bound to 2.
        assert_eq!(epoch_bound(1000, 3, 15, f64::INFINITY, 1.0), 2);
    }

    #[test]
    fn epoch_bound_scales_as_inverse_sqrt_b() {
        let b: f64 = 10.0;
        let loose = epoch_bound(10_000, 3, 15, b, 1.0);
        let tight = epoch_bound(10_000, 3, 15, b * 4.0, 1.0);
        // quadrupling B halves the bound, up to the ceilings
        assert!((tight as f64) <= (loose as f64) / 2.0 + 2.0);
    }

    #[test]
    fn sync_round_meter_and_broadcast() {
        let d = 2;
        let mut agents = vec![agent(d, 0), agent(d, 1), agent(d, 2)];
        let mut proto = SyncProtocolState::new(d, 1.0, 10.0);
        let mut meter = CommMeter::default();
        agents[0]
            .local_update(&FeatureVector::new(vec![1.0, 2.0]), None, 0.5)
            .unwrap();
        agents[2]
            .local_update(&FeatureVector::new(vec![-1.0, 0.5]), None, 1.5)
            .unwrap();
        run_sync_round(&mut agents, &mut proto, &mut meter, 4).unwrap();

        assert_eq!(meter.scalars_up, 18);
        assert_eq!(meter.scalars_down, 18);
        assert_eq!(meter.signals, 1);
        assert_eq!(meter.total(), 37);
        assert_eq!(proto.epoch_count, 1);
        assert_eq!(proto.t_last, 4);

        // All agents hold bitwise-identical synced state and empty buffers.
        for a in &agents {
            assert_eq!(a.synced_gram().matrix(), proto.w_syn().matrix());
            assert_eq!(a.synced_stats().as_slice(), proto.u_syn().as_slice());
            assert!(a.local_gram().matrix().iter().all(|&x| x == 0.0));
        }
        // V_last = lambda I + W_syn
        assert_eq!(proto.v_last().ridge(), 1.0);
        assert_eq!(proto.v_last().matrix(), proto.w_syn().matrix());
    }

    #[test]
    fn degenerate_sync_still_counts_an_epoch_and_charges_the_meter() {
        let mut agents = vec![agent(2, 0)];
        let mut proto = SyncProtocolState::new(2, 1.0, 10.0);
        let mut meter = CommMeter::default();
        run_sync_round(&mut agents, &mut proto, &mut meter, 1).unwrap();
        assert_eq!(proto.epoch_count, 1);
        assert!(proto.w_syn().matrix().iter().all(|&x| x == 0.0));
        assert_eq!(meter.total(), 6 + 6 + 1);
    }

    #[test]
    fn immediate_sharing_meter_per_round() {
        let d = 15;
        let mut agents: Vec<_> = (0..3).map(|i| agent(d, i)).collect();
        let mut proto = SyncProtocolState::new(d, 1.0, f64::INFINITY);
        let mut meter = CommMeter::default();
        run_immediate_sharing_round(&mut agents, &mut proto, &mut meter, 1).unwrap();
        assert_eq!(meter.scalars_up, 48);
        assert_eq!(meter.scalars_down, 96);
        assert_eq!(meter.signals, 0);
    }

    #[test]
    fn immediate_sharing_single_agent_has_no_relay_cost_down() {
        let mut agents = vec![agent(4, 0)];
        let mut proto = SyncProtocolState::new(4, 1.0, f64::INFINITY);
        let mut meter = CommMeter::default();
        run_immediate_sharing_round(&mut agents, &mut proto, &mut meter, 1).unwrap();
        assert_eq!(meter.scalars_down, 0);
        assert_eq!(meter.scalars_up, 5);
    }

    #[test]
    fn immediate_sharing_replicates_totals_across_agents() {
        let mut agents: Vec<_> = (0..3).map(|i| agent(3, i)).collect();
        let mut proto = SyncProtocolState::new(3, 1.0, f64::INFINITY);
        let mut meter = CommMeter::default();
        for t in 1..=5 {
            for (i, a) in agents.iter_mut().enumerate() {
                let v = FeatureVector::new(vec![i as f64 + 1.0, t as f64, 0.5]);
                a.local_update(&v, None, 1.0).unwrap();
            }
            run_immediate_sharing_round(&mut agents, &mut proto, &mut meter, t).unwrap();
        }
        let reference = agents[0].total_gram();
        for a in &agents[1..] {
            assert_eq!(a.total_gram().matrix(), reference.matrix());
        }
    }
}
