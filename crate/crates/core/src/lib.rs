//! Distributed linear stochastic bandits with context distributions.
//!
//! M agents, coordinated by a central server, face a shared linear reward
//! model but observe only a per-round distribution over contexts. Learning
//! runs on expected feature vectors with optimism-in-the-face-of-uncertainty
//! selection; agents synchronize their sufficient statistics through an
//! event-triggered protocol priced in scalars on the wire.
//!
//! The crate splits into:
//!
//! * [`linalg`] — dense SPD accumulators, Cholesky solves, log-determinants;
//! * [`contexts`] / [`mod@env`] — context distributions, feature maps, and
//!   the synthetic quadratic and bilinear rating environments;
//! * [`agent`] — confidence ellipsoids and optimistic selection;
//! * [`protocol`] — the event trigger, sync rounds, baselines, metering;
//! * [`sim`] / [`config`] / [`trace`] — the experiment harness and its CSV
//!   output;
//! * [`data`] — ratings ingestion and ALS factorization;
//! * [`diag`] — statistical self-checks for a configured run.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the harness and every shipped binary run the `f64` instantiations
//! aliased below.

pub mod agent;
pub mod config;
pub mod contexts;
pub mod data;
pub mod diag;
pub mod env;
pub mod linalg;
pub mod protocol;
pub mod scalar;
pub mod sim;
pub mod stream;
pub mod trace;

/// Scalar type used throughout the shipped artifact.
pub type Real = f64;

pub type Features = linalg::FeatureVector<Real>;
pub type Gram = linalg::PsdAccumulator<Real>;
pub type Stats = linalg::LinearStatistics<Real>;
pub type ContextModel = contexts::ContextDistribution<Real>;
pub type Env = env::Environment<Real>;
pub type Agent = agent::AgentState<Real>;
pub type Confidence = agent::ConfidenceParams<Real>;
pub type Server = protocol::SyncProtocolState<Real>;

pub use config::{ExperimentConfig, ObservationMode};
pub use protocol::ProtocolKind;
pub use sim::{run_experiment, run_experiment_with, SimError, TraceLevel};
pub use trace::ExperimentTrace;
