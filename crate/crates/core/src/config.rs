//! Experiment configuration: a flat `key = value` text format with a strict
//! schema. Unknown keys, duplicate keys, and malformed values are hard
//! errors so a checked-in config reproduces a run exactly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::protocol::ProtocolKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// What agents observe about the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    /// Only the context distribution, never the realization.
    Hidden,
    /// The realization is revealed after the action is taken.
    Observed,
    /// The realization is revealed before the action is taken
    /// (exact-context baseline; forces point-mass distributions).
    Exact,
}

impl ObservationMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hidden" => Some(Self::Hidden),
            "observed" => Some(Self::Observed),
            "exact" => Some(Self::Exact),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hidden => "hidden",
            Self::Observed => "observed",
            Self::Exact => "exact",
        }
    }
}

pub fn parse_protocol(s: &str) -> Option<ProtocolKind> {
    match s {
        "sync" => Some(ProtocolKind::EventTriggered),
        "immediate" => Some(ProtocolKind::ImmediateSharing),
        "none" => Some(ProtocolKind::NoCommunication),
        _ => None,
    }
}

pub fn protocol_name(p: ProtocolKind) -> &'static str {
    match p {
        ProtocolKind::EventTriggered => "sync",
        ProtocolKind::ImmediateSharing => "immediate",
        ProtocolKind::NoCommunication => "none",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvChoice {
    Synthetic,
    Movielens {
        ratings_path: Option<PathBuf>,
        factors_path: Option<PathBuf>,
        rank: usize,
        noise_level: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    /// Number of agents (config key `M`).
    pub agents: usize,
    /// Horizon in rounds (config key `T`).
    pub horizon: usize,
    pub trials: usize,
    pub mode: ObservationMode,
    pub protocol: ProtocolKind,
    /// Base failure probability; defaults to `1 / (M^2 T)`.
    pub delta: Option<f64>,
    pub lambda: f64,
    /// Bound on `||theta*||` (config key `S`); defaults to the oracle norm.
    pub param_bound: Option<f64>,
    pub rho_override: Option<f64>,
    pub b_override: Option<f64>,
    pub seed: u64,
}

impl ExperimentConfig {
    /// A synthetic-environment config with the standard experiment shape.
    pub fn synthetic(agents: usize, horizon: usize, trials: usize, seed: u64) -> Self {
        Self {
            env: EnvChoice::Synthetic,
            agents,
            horizon,
            trials,
            mode: ObservationMode::Hidden,
            protocol: ProtocolKind::EventTriggered,
            delta: None,
            lambda: 1.0,
            param_bound: None,
            rho_override: None,
            b_override: None,
            seed,
        }
    }

    pub fn with_mode(mut self, mode: ObservationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_protocol(mut self, protocol: ProtocolKind) -> Self {
        self.protocol = protocol;
        self
    }

    /// Effective base failure probability.
    pub fn delta_effective(&self) -> f64 {
        self.delta
            .unwrap_or_else(|| 1.0 / ((self.agents * self.agents) as f64 * self.horizon as f64))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_str_strict(&text)
    }

    pub fn from_str_strict(text: &str) -> Result<Self, ConfigError> {
        const KNOWN: &[&str] = &[
            "env",
            "M",
            "T",
            "trials",
            "mode",
            "protocol",
            "delta",
            "lambda",
            "S",
            "rho_override",
            "B_override",
            "seed",
            "ratings_path",
            "factors_path",
            "rank",
            "noise_level",
        ];
        let mut seen: HashSet<String> = HashSet::new();
        let mut env_kind: Option<(usize, String)> = None;
        let mut agents = None;
        let mut horizon = None;
        let mut trials = None;
        let mut mode = None;
        let mut protocol = None;
        let mut delta = None;
        let mut lambda = None;
        let mut param_bound = None;
        let mut rho_override = None;
        let mut b_override = None;
        let mut seed = None;
        let mut ratings_path: Option<PathBuf> = None;
        let mut factors_path: Option<PathBuf> = None;
        let mut rank = None;
        let mut noise_level = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed {
                    line,
                    text: trimmed.to_string(),
                })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            let bad = |reason: &str| ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason: reason.to_string(),
            };
            match key {
                "env" => env_kind = Some((line, value.to_string())),
                "M" => agents = Some(value.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
                "T" => horizon = Some(value.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
                "trials" => trials = Some(value.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
                "mode" => {
                    mode = Some(
                        ObservationMode::parse(value)
                            .ok_or_else(|| bad("expected hidden, observed, or exact"))?,
                    )
                }
                "protocol" => {
                    protocol = Some(
                        parse_protocol(value)
                            .ok_or_else(|| bad("expected sync, immediate, or none"))?,
                    )
                }
                "delta" => delta = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?),
                "lambda" => lambda = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?),
                "S" => param_bound = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?),
                "rho_override" => {
                    rho_override = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?)
                }
                "B_override" => {
                    b_override = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?)
                }
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(&e.to_string()))?),
                "ratings_path" => ratings_path = Some(PathBuf::from(value)),
                "factors_path" => factors_path = Some(PathBuf::from(value)),
                "rank" => rank = Some(value.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
                "noise_level" => {
                    noise_level = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?)
                }
                _ => unreachable!("key membership checked above"),
            }
        }

        let (env_line, env_name) = env_kind.ok_or(ConfigError::MissingKey("env"))?;
        let env = match env_name.as_str() {
            "synthetic" => {
                for (k, set) in [
                    ("ratings_path", ratings_path.is_some()),
                    ("factors_path", factors_path.is_some()),
                    ("rank", rank.is_some()),
                    ("noise_level", noise_level.is_some()),
                ] {
                    if set {
                        return Err(ConfigError::Invalid(format!(
                            "key `{k}` requires env = movielens"
                        )));
                    }
                }
                EnvChoice::Synthetic
            }
            "movielens" => {
                if ratings_path.is_none() && factors_path.is_none() {
                    return Err(ConfigError::Invalid(
                        "env = movielens needs ratings_path or factors_path".to_string(),
                    ));
                }
                if ratings_path.is_some() && factors_path.is_some() {
                    return Err(ConfigError::Invalid(
                        "set only one of ratings_path and factors_path".to_string(),
                    ));
                }
                EnvChoice::Movielens {
                    ratings_path,
                    factors_path,
                    rank: rank.unwrap_or(6),
                    noise_level: noise_level.unwrap_or(0.1),
                }
            }
            other => {
                return Err(ConfigError::BadValue {
                    line: env_line,
                    key: "env".to_string(),
                    reason: format!("expected synthetic or movielens, got `{other}`"),
                })
            }
        };

        let cfg = Self {
            env,
            agents: agents.ok_or(ConfigError::MissingKey("M"))?,
            horizon: horizon.ok_or(ConfigError::MissingKey("T"))?,
            trials: trials.ok_or(ConfigError::MissingKey("trials"))?,
            mode: mode.ok_or(ConfigError::MissingKey("mode"))?,
            protocol: protocol.ok_or(ConfigError::MissingKey("protocol"))?,
            delta,
            lambda: lambda.unwrap_or(1.0),
            param_bound,
            rho_override,
            b_override,
            seed: seed.ok_or(ConfigError::MissingKey("seed"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agents < 1 {
            return Err(ConfigError::Invalid("M must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(ConfigError::Invalid("T must be at least 1".into()));
        }
        if self.trials < 1 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "delta must lie in (0, 1], got {d}"
                )));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if let Some(s) = self.param_bound {
            if s < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "S must be nonnegative, got {s}"
                )));
            }
        }
        if let Some(rho) = self.rho_override {
            if rho < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "rho_override must be nonnegative, got {rho}"
                )));
            }
        }
        if let Some(b) = self.b_override {
            if !(b > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "B_override must be positive, got {b}"
                )));
            }
        }
        if let EnvChoice::Movielens {
            rank, noise_level, ..
        } = &self.env
        {
            if *rank < 1 {
                return Err(ConfigError::Invalid("rank must be at least 1".into()));
            }
            if *noise_level < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "noise_level must be nonnegative, got {noise_level}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# synthetic benchmark
env = synthetic
M = 3
T = 1000
trials = 100
mode = hidden
protocol = sync
seed = 42
";

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::from_str_strict(GOOD).unwrap();
        assert_eq!(cfg.agents, 3);
        assert_eq!(cfg.horizon, 1000);
        assert_eq!(cfg.mode, ObservationMode::Hidden);
        assert_eq!(cfg.protocol, ProtocolKind::EventTriggered);
        assert_eq!(cfg.lambda, 1.0);
        assert!((cfg.delta_effective() - 1.0 / 9000.0).abs() < 1e-18);
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let text = format!("{GOOD}frobnicate = 1\n");
        assert!(matches!(
            ExperimentConfig::from_str_strict(&text),
            Err(ConfigError::UnknownKey { key, .. }) if key == "frobnicate"
        ));
    }

    #[test]
    fn duplicate_key_is_a_hard_error() {
        let text = format!("{GOOD}seed = 43\n");
        assert!(matches!(
            ExperimentConfig::from_str_strict(&text),
            Err(ConfigError::DuplicateKey { key, .. }) if key == "seed"
        ));
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = GOOD.replace("seed = 42\n", "");
        assert_eq!(
            ExperimentConfig::from_str_strict(&text),
            Err(ConfigError::MissingKey("seed"))
        );
    }

    #[test]
    fn movielens_keys_rejected_under_synthetic() {
        let text = format!("{GOOD}noise_level = 0.1\n");
        assert!(matches!(
            ExperimentConfig::from_str_strict(&text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn movielens_requires_a_data_path() {
        let text = GOOD.replace("env = synthetic", "env = movielens");
        assert!(matches!(
            ExperimentConfig::from_str_strict(&text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn movielens_defaults() {
        let text = GOOD.replace("env = synthetic", "env = movielens\nratings_path = r.dat");
        let cfg = ExperimentConfig::from_str_strict(&text).unwrap();
        match cfg.env {
            EnvChoice::Movielens {
                rank, noise_level, ..
            } => {
                assert_eq!(rank, 6);
                assert_eq!(noise_level, 0.1);
            }
            other => panic!("unexpected env {other:?}"),
        }
    }

    #[test]
    fn bad_enum_values_are_rejected_with_line_numbers() {
        let text = GOOD.replace("mode = hidden", "mode = clairvoyant");
        match ExperimentConfig::from_str_strict(&text) {
            Err(ConfigError::BadValue { key, .. }) => assert_eq!(key, "mode"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_agents_rejected() {
        let text = GOOD.replace("M = 3", "M = 0");
        assert!(matches!(
            ExperimentConfig::from_str_strict(&text),
            Err(ConfigError::Invalid(_))
        ));
    }
}
