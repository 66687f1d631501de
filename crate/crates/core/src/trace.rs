//! Experiment traces and their CSV form.
//!
//! The CSV is the product: `trial,round,cum_regret,epochs,comm_scalars`,
//! one row per (trial, round) in trial-major order, floats printed with 17
//! significant digits so a re-run with the same config and seed emits a
//! byte-identical file.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::config::ObservationMode;
use crate::contexts::ContextDistribution;
use crate::linalg::{FeatureVector, PsdAccumulator};
use crate::protocol::ProtocolKind;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Echo of the run settings the trace was produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub agents: usize,
    pub horizon: usize,
    pub trials: usize,
    pub mode: ObservationMode,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub feature_dim: usize,
    pub threshold_b: f64,
    /// Perturbation scale of observed user factors (bilinear envs only).
    pub noise_level: Option<f64>,
}

/// One round's cumulative accounting within a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub cum_regret: f64,
    pub epochs: u64,
    pub comm_scalars: u64,
}

/// One (round, agent) step, collected only at `TraceLevel::Steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub round: usize,
    pub agent: usize,
    pub chosen: usize,
    pub beta: f64,
    pub log_det: f64,
    /// Whether `theta*` lay inside this step's confidence ellipsoid.
    pub covered: bool,
    /// Realized-minus-expected regret gap martingale increment.
    pub d_j: f64,
    /// Expected-minus-realized feature norm supermartingale increment.
    pub s_j: f64,
}

/// A frozen selection instant for resampling diagnostics.
#[derive(Debug, Clone)]
pub struct StepSnapshot {
    pub trial: usize,
    pub round: usize,
    pub agent: usize,
    pub chosen: usize,
    pub best: usize,
    pub oracle_mu: ContextDistribution<f64>,
    pub psi_chosen: FeatureVector<f64>,
    /// Design matrix at selection time (ridge included).
    pub gram: PsdAccumulator<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrialTrace {
    pub rounds: Vec<RoundRecord>,
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<StepSnapshot>,
}

#[derive(Debug, Clone)]
pub struct ExperimentTrace {
    pub meta: TraceMeta,
    pub trials: Vec<TrialTrace>,
}

impl ExperimentTrace {
    pub fn cum_regret_at(&self, trial: usize, round: usize) -> f64 {
        self.trials[trial].rounds[round - 1].cum_regret
    }

    /// Final cumulative regrets, one per trial.
    pub fn final_regrets(&self) -> Vec<f64> {
        self.trials
            .iter()
            .map(|t| t.rounds.last().map(|r| r.cum_regret).unwrap_or(0.0))
            .collect()
    }

    pub fn mean_final_regret(&self) -> f64 {
        let finals = self.final_regrets();
        finals.iter().sum::<f64>() / finals.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "trial,round,cum_regret,epochs,comm_scalars")?;
        for (trial, tt) in self.trials.iter().enumerate() {
            for (idx, row) in tt.rounds.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{:.16e},{},{}",
                    trial,
                    idx + 1,
                    row.cum_regret,
                    row.epochs,
                    row.comm_scalars
                )?;
            }
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<(), TraceError> {
        let wrap = |source: std::io::Error| TraceError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(wrap)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_csv(&mut buf).map_err(wrap)?;
        use std::io::Write as _;
        buf.flush().map_err(wrap)
    }
}
