//! Poisoning-based verification of unlearning.
//!
//! The client to be forgotten submits a sign-flipped, amplified model
//! (`-z * M_local`), which makes its influence on the global ranker large and
//! measurable. Three reference federations share the same honest clients:
//!
//! - `9H-1M`: nine honest clients plus the poisoned one,
//! - `10H-0M`: the same ten clients, all honest,
//! - `9H-0M`: only the nine honest clients (retraining from scratch).
//!
//! `U(9H-1M)` is `9H-1M` followed by unlearning of the poisoned client.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranker::{DimensionMismatch, LinearRanker, ModelDelta};

pub const DEFAULT_POISON_STRENGTH: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("poison strength z must be positive and finite, got {0}")]
    InvalidStrength(f64),
    #[error("target client {target} is not among the {num_clients} clients")]
    TargetAbsent { target: usize, num_clients: usize },
    #[error("unknown scenario `{0}` (expected 9h-1m, 10h-0m, 9h-0m or unlearn)")]
    UnknownScenario(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

fn check_strength(z: f64) -> Result<(), AdversaryError> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(AdversaryError::InvalidStrength(z))
    }
}

/// `-z * local`.
pub fn poison_model(local: &LinearRanker, z: f64) -> Result<LinearRanker, AdversaryError> {
    check_strength(z)?;
    Ok(LinearRanker::from_weights(
        local.weights().iter().map(|w| -z * w).collect(),
    ))
}

/// `-z * delta - (z + 1) * global`: the update that turns `global` into
/// `poison_model(global + delta)`.
pub fn poison_update(local_delta: &ModelDelta, global: &LinearRanker, z: f64) -> Result<ModelDelta, AdversaryError> {
    check_strength(z)?;
    if local_delta.dim() != global.dim() {
        return Err(DimensionMismatch {
            expected: global.dim(),
            actual: local_delta.dim(),
        }
        .into());
    }
    Ok(ModelDelta::from_vec(
        local_delta
            .values()
            .iter()
            .zip(global.weights())
            .map(|(d, g)| -z * d - (z + 1.0) * g)
            .collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "9h-1m")]
    NineHonestOneMalicious,
    #[serde(rename = "10h-0m")]
    TenHonest,
    #[serde(rename = "9h-0m")]
    NineHonest,
    /// Train as `9H-1M`, then unlearn the malicious client.
    #[serde(rename = "unlearn")]
    UnlearnNineHonestOneMalicious,
}

impl ScenarioKind {
    pub const ALL: [Self; 4] = [
        Self::NineHonestOneMalicious,
        Self::TenHonest,
        Self::NineHonest,
        Self::UnlearnNineHonestOneMalicious,
    ];

    /// The federation actually trained for this scenario.
    pub fn training_kind(self) -> Self {
        match self {
            Self::UnlearnNineHonestOneMalicious => Self::NineHonestOneMalicious,
            other => other,
        }
    }

    fn uses_target(self) -> bool {
        !matches!(self, Self::TenHonest)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NineHonestOneMalicious => "9h-1m",
            Self::TenHonest => "10h-0m",
            Self::NineHonest => "9h-0m",
            Self::UnlearnNineHonestOneMalicious => "unlearn",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "9h-1m" => Ok(Self::NineHonestOneMalicious),
            "10h-0m" => Ok(Self::TenHonest),
            "9h-0m" => Ok(Self::NineHonest),
            "unlearn" | "u(9h-1m)" => Ok(Self::UnlearnNineHonestOneMalicious),
            _ => Err(AdversaryError::UnknownScenario(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Poison strength.
    pub z: f64,
    /// The client that is poisoned, excluded, or unlearned.
    pub target_client: usize,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, target_client: usize) -> Self {
        Self {
            kind,
            z: DEFAULT_POISON_STRENGTH,
            target_client,
        }
    }

    pub fn with_kind(self, kind: ScenarioKind) -> Self {
        Self { kind, ..self }
    }
}

/// Per-round hooks of a scenario over a pool of `num_clients` clients.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    config: ScenarioConfig,
    num_clients: usize,
}

/// Validates `config` against the client pool and returns its hooks.
pub fn scenario_hooks(config: ScenarioConfig, num_clients: usize) -> Result<Scenario, AdversaryError> {
    check_strength(config.z)?;
    if config.kind.uses_target() && config.target_client >= num_clients {
        return Err(AdversaryError::TargetAbsent {
            target: config.target_client,
            num_clients,
        });
    }
    Ok(Scenario { config, num_clients })
}

impl Scenario {
    pub fn config(&self) -> ScenarioConfig {
        self.config
    }

    /// Client ids taking part in training, ascending.
    pub fn participants(&self) -> Vec<usize> {
        match self.config.kind.training_kind() {
            ScenarioKind::NineHonest => (0..self.num_clients)
                .filter(|&c| c != self.config.target_client)
                .collect(),
            _ => (0..self.num_clients).collect(),
        }
    }

    pub fn is_malicious(&self, client: usize) -> bool {
        self.config.kind.training_kind() == ScenarioKind::NineHonestOneMalicious && client == self.config.target_client
    }

    /// The update `client` actually submits (and stores) for its honest
    /// local update `delta` against `global`.
    pub fn submit(
        &self,
        client: usize,
        delta: ModelDelta,
        global: &LinearRanker,
    ) -> Result<ModelDelta, AdversaryError> {
        if self.is_malicious(client) {
            poison_update(&delta, global, self.config.z)
        } else {
            Ok(delta)
        }
    }
}
