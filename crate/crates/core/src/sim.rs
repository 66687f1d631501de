//! The experiment engine: multi-trial, multi-agent simulation of the
//! distributed bandit protocols.
//!
//! Every trial owns its environment, agents, and server state; trials run
//! in parallel and all randomness is drawn from streams keyed by
//! `(seed, trial, round, agent)`, so a config+seed pair produces a
//! bit-identical trace on any thread count.
//!
//! Per round: nature draws the context distribution and one realized
//! context shared by all agents; agents select optimistically over the
//! expected feature set, receive rewards, and fold the observation into
//! their buffers; the synchronization trigger is evaluated once all agents
//! finish the round, and at most one sync round runs at the round boundary.
//! Per-step pseudo-regret is measured against the distribution-optimal
//! action of nature's distribution, evaluated at the realized context, in
//! every observation mode.

use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{AgentError, AgentState, ConfidenceParams, UpdateMode};
use crate::config::{EnvChoice, ExperimentConfig, ObservationMode};
use crate::contexts::ContextDistribution;
use crate::data::{self, DataError};
use crate::env::{EnvError, Environment, SyntheticConfig};

use crate::protocol::{
    default_b, run_immediate_sharing_round, run_sync_round, trigger_check, CommMeter,
    ProtocolError, ProtocolKind, SyncProtocolState,
};
use crate::stream::{self, StreamPurpose};
use crate::trace::{ExperimentTrace, RoundRecord, StepRecord, StepSnapshot, TraceMeta, TrialTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
}

/// How much per-step detail a run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLevel {
    /// Per-round regret/communication rows only.
    Rounds,
    /// Also per-step diagnostics and selection snapshots.
    Steps,
}

/// Reusable per-config environment ingredients (factor matrices for the
/// rating environment are computed once, not per trial).
#[derive(Debug, Clone)]
pub enum EnvTemplate {
    Synthetic(SyntheticConfig),
    Bilinear {
        user_factors: Vec<Vec<f64>>,
        item_factors: Vec<Vec<f64>>,
        noise_level: f64,
        noise_sigma: f64,
    },
}

/// ALS sweeps used when a run has to factorize raw ratings itself.
pub const DEFAULT_ALS_ITERATIONS: usize = 25;
/// ALS ridge used for the same path.
pub const DEFAULT_ALS_REGULARIZATION: f64 = 0.1;

impl EnvTemplate {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, SimError> {
        match &cfg.env {
            EnvChoice::Synthetic => Ok(Self::Synthetic(SyntheticConfig::default())),
            EnvChoice::Movielens {
                ratings_path,
                factors_path,
                rank,
                noise_level,
            } => {
                let (user_factors, item_factors) = if let Some(path) = factors_path {
                    let (users, items) = data::read_factors_file(path)?;
                    let file_rank = users.first().map(|v| v.len()).unwrap_or(0);
                    if file_rank != *rank {
                        return Err(crate::config::ConfigError::Invalid(format!(
                            "factors file has rank {file_rank} but config says rank = {rank}"
                        ))
                        .into());
                    }
                    (users, items)
                } else {
                    let path = ratings_path
                        .as_ref()
                        .expect("config validation guarantees a path");
                    let dataset = data::ingest_ratings(path)?;
                    let fac = data::factorize(
                        &dataset,
                        *rank,
                        DEFAULT_ALS_ITERATIONS,
                        DEFAULT_ALS_REGULARIZATION,
                        cfg.seed,
                    )?;
                    (fac.user_factors, fac.item_factors)
                };
                Ok(Self::Bilinear {
                    user_factors,
                    item_factors,
                    noise_level: *noise_level,
                    noise_sigma: 1e-3,
                })
            }
        }
    }

    /// Build the trial's environment. Each trial draws its own action set
    /// (synthetic) or user perturbations (bilinear) from a seed derived
    /// from (run seed, trial).
    pub fn realize(&self, seed: u64, trial: u64) -> Result<Environment<f64>, SimError> {
        let env_seed = stream::derive_seed(seed, &[trial]);
        match self {
            Self::Synthetic(cfg) => Ok(cfg.build(env_seed)),
            Self::Bilinear {
                user_factors,
                item_factors,
                noise_level,
                noise_sigma,
            } => Ok(crate::env::make_bilinear_env(
                user_factors.clone(),
                item_factors.clone(),
                *noise_level,
                *noise_sigma,
                env_seed,
            )?),
        }
    }

    fn noise_level(&self) -> Option<f64> {
        match self {
            Self::Synthetic(_) => None,
            Self::Bilinear { noise_level, .. } => Some(*noise_level),
        }
    }

    /// Whether the announced distribution really is the distribution the
    /// realized context is drawn from. The bilinear environment hands
    /// agents a perturbed point estimate instead, so expectation-based
    /// centering diagnostics do not apply to it.
    pub fn expectation_consistent(&self) -> bool {
        match self {
            Self::Synthetic(_) => true,
            Self::Bilinear { noise_level, .. } => *noise_level == 0.0,
        }
    }
}

/// The (rho, delta) pair the confidence radius runs with.
///
/// When the announced distribution pins the context exactly — the exact
/// observation mode, or a degenerate context process — there is no
/// context-induced noise term and the radius reduces to the exact-context
/// baseline `(sigma, delta/2)`. Otherwise the hidden-context algorithm uses
/// `(sqrt(4 + sigma^2), delta/2)` to absorb the bounded feature-mismatch
/// noise, and the context-observation algorithm uses `(sigma, delta/3)`.
pub fn effective_confidence(
    cfg: &ExperimentConfig,
    env: &Environment<f64>,
) -> ConfidenceParams<f64> {
    let sigma = env.noise_sigma();
    let delta = cfg.delta_effective();
    let exact = cfg.mode == ObservationMode::Exact || env.exactly_observed();
    let (rho, delta_eff) = if exact {
        (sigma, delta / 2.0)
    } else {
        match cfg.mode {
            ObservationMode::Hidden => ((4.0 + sigma * sigma).sqrt(), delta / 2.0),
            ObservationMode::Observed => (sigma, delta / 3.0),
            ObservationMode::Exact => unreachable!("handled above"),
        }
    };
    ConfidenceParams {
        rho: cfg.rho_override.unwrap_or(rho),
        delta: delta_eff,
        lambda: cfg.lambda,
        param_bound: cfg.param_bound.unwrap_or_else(|| env.param_norm_bound()),
    }
}

fn trigger_threshold(cfg: &ExperimentConfig, dim: usize) -> f64 {
    match cfg.protocol {
        ProtocolKind::EventTriggered => cfg
            .b_override
            .unwrap_or_else(|| default_b(cfg.horizon, cfg.agents, dim)),
        ProtocolKind::NoCommunication | ProtocolKind::ImmediateSharing => f64::INFINITY,
    }
}

/// Rounds whose first-agent selection state gets frozen for resampling
/// diagnostics (only at `TraceLevel::Steps`).
fn snapshot_rounds(horizon: usize) -> Vec<usize> {
    let mut rounds: Vec<usize> = [1, horizon / 4, horizon / 2, 3 * horizon / 4, horizon]
        .into_iter()
        .filter(|&t| t >= 1)
        .collect();
    rounds.dedup();
    rounds
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentTrace, SimError> {
    run_experiment_with(cfg, TraceLevel::Rounds)
}

pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    level: TraceLevel,
) -> Result<ExperimentTrace, SimError> {
    let template = EnvTemplate::from_config(cfg)?;
    run_experiment_on(cfg, &template, level)
}

/// Run against an explicit environment template (tests and diagnostics use
/// this to vary the context process beyond what the config format exposes).
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    template: &EnvTemplate,
    level: TraceLevel,
) -> Result<ExperimentTrace, SimError> {
    cfg.validate()?;
    let trials: Vec<TrialTrace> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(cfg, template, trial, level))
        .collect::<Result<_, _>>()?;
    let probe_env = template.realize(cfg.seed, 0)?;
    let meta = TraceMeta {
        agents: cfg.agents,
        horizon: cfg.horizon,
        trials: cfg.trials,
        mode: cfg.mode,
        protocol: cfg.protocol,
        seed: cfg.seed,
        feature_dim: probe_env.feature_dim(),
        threshold_b: trigger_threshold(cfg, probe_env.feature_dim()),
        noise_level: template.noise_level(),
    };
    Ok(ExperimentTrace { meta, trials })
}

pub fn run_trial(
    cfg: &ExperimentConfig,
    template: &EnvTemplate,
    trial: usize,
    level: TraceLevel,
) -> Result<TrialTrace, SimError> {
    let env = template.realize(cfg.seed, trial as u64)?;
    let dim = env.feature_dim();
    let confidence = effective_confidence(cfg, &env);
    let update_mode = match cfg.mode {
        ObservationMode::Hidden | ObservationMode::Exact => UpdateMode::Hidden,
        ObservationMode::Observed => UpdateMode::Observed,
    };
    let mut agents: Vec<AgentState<f64>> = (0..cfg.agents)
        .map(|i| AgentState::new(i, dim, update_mode, confidence))
        .collect();
    let mut proto = SyncProtocolState::new(dim, cfg.lambda, trigger_threshold(cfg, dim));
    let mut meter = CommMeter::default();
    let theta = env.theta_star().clone();

    let snapshots_at = match level {
        TraceLevel::Rounds => Vec::new(),
        TraceLevel::Steps => snapshot_rounds(cfg.horizon),
    };
    let mut out = TrialTrace::default();
    out.rounds.reserve(cfg.horizon);
    let mut cum_regret = 0.0;

    for t in 1..=cfg.horizon {
        let mut nature = stream::stream(cfg.seed, StreamPurpose::Nature, trial as u64, t as u64, 0);
        let round = env.draw_round(&mut nature);
        let observed_mu = match cfg.mode {
            ObservationMode::Exact => ContextDistribution::Dirac(round.realized.clone()),
            _ => round.observed_mu.clone(),
        };

        let psi_oracle = env.psi_set(&round.oracle_mu);
        let best = env.best_action_from_psi(&psi_oracle);
        let phi_best = env.phi(best, &round.realized);
        let reward_best = phi_best.dot(&theta);

        let psi_agents = env.psi_set(&observed_mu);

        for i in 0..cfg.agents {
            let selection = agents[i].select_action(&psi_agents)?;
            let chosen = selection.action;
            let phi_chosen = env.phi(chosen, &round.realized);

            if level == TraceLevel::Steps {
                let pre_update = agents[i].total_gram();
                let ellipsoid = agents[i].ellipsoid()?;
                let covered = ellipsoid.contains(&theta)?;
                // Realized gap minus expected gap, kept as two identically
                // shaped differences so it vanishes exactly under point
                // masses.
                let realized_gap = reward_best - phi_chosen.dot(&theta);
                let expected_gap = psi_oracle[best].dot(&theta) - psi_oracle[chosen].dot(&theta);
                let d_j = realized_gap - expected_gap;
                let factor = pre_update.cholesky().map_err(AgentError::from)?;
                let s_j = factor.inv_weighted_norm(psi_agents[chosen].as_slice())
                    - factor.inv_weighted_norm(phi_chosen.as_slice());
                out.steps.push(StepRecord {
                    round: t,
                    agent: i,
                    chosen,
                    beta: selection.beta,
                    log_det: selection.log_det,
                    covered,
                    d_j,
                    s_j,
                });
                if i == 0 && snapshots_at.contains(&t) {
                    out.snapshots.push(StepSnapshot {
                        trial,
                        round: t,
                        agent: i,
                        chosen,
                        best,
                        oracle_mu: round.oracle_mu.clone(),
                        psi_chosen: psi_agents[chosen].clone(),
                        gram: pre_update,
                    });
                }
            }

            let mut noise = stream::stream(
                cfg.seed,
                StreamPurpose::AgentNoise,
                trial as u64,
                t as u64,
                i as u64,
            );
            let reward = env.draw_reward(chosen, &round.realized, &mut noise);
            cum_regret += reward_best - phi_chosen.dot(&theta);

            match update_mode {
                UpdateMode::Hidden => agents[i].local_update(&psi_agents[chosen], None, reward)?,
                UpdateMode::Observed => {
                    agents[i].local_update(&psi_agents[chosen], Some(&phi_chosen), reward)?
                }
            }
        }

        match cfg.protocol {
            ProtocolKind::EventTriggered | ProtocolKind::NoCommunication => {
                let mut fired = false;
                for agent in &agents {
                    if trigger_check(&agent.total_gram(), &proto, t)? {
                        fired = true;
                        break;
                    }
                }
                if fired {
                    run_sync_round(&mut agents, &mut proto, &mut meter, t)?;
                }
            }
            ProtocolKind::ImmediateSharing => {
                run_immediate_sharing_round(&mut agents, &mut proto, &mut meter, t)?;
            }
        }

        out.rounds.push(RoundRecord {
            cum_regret,
            epochs: proto.epoch_count,
            comm_scalars: meter.total(),
        });
    }

    Ok(out)
}

/// Per-step feature vectors and state needed to replay a frozen selection
/// instant against fresh context draws; used by the diagnostics suite.
pub fn resample_increments(
    env: &Environment<f64>,
    snapshot: &StepSnapshot,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let theta = env.theta_star();
    let factor = snapshot.gram.cholesky().map_err(AgentError::from)?;
    let psi_best = env.psi(snapshot.best, &snapshot.oracle_mu);
    let psi_chosen_expected = env.psi(snapshot.chosen, &snapshot.oracle_mu);
    let expected_gap = psi_best.dot(theta) - psi_chosen_expected.dot(theta);
    let psi_norm = factor.inv_weighted_norm(snapshot.psi_chosen.as_slice());

    let mut rng = stream::stream(
        seed,
        StreamPurpose::MonteCarlo,
        snapshot.trial as u64,
        snapshot.round as u64,
        1,
    );
    let mut d_draws = Vec::with_capacity(samples);
    let mut s_draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c = snapshot.oracle_mu.sample(&mut rng);
        let phi_best = env.phi(snapshot.best, &c);
        let phi_chosen = env.phi(snapshot.chosen, &c);
        d_draws.push(phi_best.dot(theta) - phi_chosen.dot(theta) - expected_gap);
        s_draws.push(psi_norm - factor.inv_weighted_norm(phi_chosen.as_slice()));
    }
    Ok((d_draws, s_draws))
}

/// Action sequence of one agent across a trial (needs `TraceLevel::Steps`).
pub fn action_sequence(trace: &TrialTrace, agent: usize) -> Vec<usize> {
    trace
        .steps
        .iter()
        .filter(|s| s.agent == agent)
        .map(|s| s.chosen)
        .collect()
}

/// Convenience wrapper for tests and single-agent comparisons: run with the
/// given mode/protocol and return per-trial final regrets.
pub fn final_regrets(cfg: &ExperimentConfig) -> Result<Vec<f64>, SimError> {
    Ok(run_experiment(cfg)?.final_regrets())
}

#[allow(unused_imports)]
pub use crate::protocol::epoch_bound;
