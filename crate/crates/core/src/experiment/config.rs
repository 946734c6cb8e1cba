use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::adversary::{scenario_hooks, ScenarioConfig, ScenarioKind};
use crate::clicksim::ClickModelName;
use crate::dataset::DatasetKind;
use crate::federation::FederationConfig;
use crate::pdgd::PdgdConfig;
use crate::synthetic::SyntheticConfig;
use crate::unlearning::UnlearnConfig;

/// Where the queries come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Letor {
        kind: DatasetKind,
        root: PathBuf,
        /// Per-query min-max normalization; `None` uses the kind's default.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        normalize: Option<bool>,
    },
    Synthetic(SyntheticConfig),
}

impl DatasetSource {
    pub fn normalize(&self) -> bool {
        match self {
            Self::Letor { kind, normalize, .. } => normalize.unwrap_or(kind.default_normalize()),
            Self::Synthetic(_) => false,
        }
    }

    pub fn max_grade(&self) -> u8 {
        match self {
            Self::Letor { kind, .. } => kind.max_grade(),
            Self::Synthetic(c) => c.max_grade,
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Letor { kind, .. } => write!(f, "{kind}"),
            Self::Synthetic(c) => write!(f, "synthetic-{}", c.seed),
        }
    }
}

/// Every knob of one experiment. Serialized as TOML; the snapshot embedded in
/// each run log reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub click_model: ClickModelName,
    /// `seed` here is the base seed; repeats derive their own.
    pub federation: FederationConfig,
    pub unlearn: UnlearnConfig,
    pub scenario: ScenarioConfig,
    pub pdgd: PdgdConfig,
    pub repeats: usize,
    pub eval_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults of the reference setup on the given data: 10 clients, five
    /// local steps, 10,000 rounds, `dt = 10`, `n' = 3`, `z = 2`, perfect
    /// clicks, the last client as the target.
    pub fn new(dataset: DatasetSource) -> Self {
        let federation = FederationConfig::default();
        Self {
            dataset,
            click_model: ClickModelName::Perfect,
            unlearn: UnlearnConfig {
                delta_t: federation.delta_t,
                ..Default::default()
            },
            scenario: ScenarioConfig::new(ScenarioKind::NineHonest, federation.num_clients - 1),
            federation,
            pdgd: PdgdConfig::default(),
            repeats: 1,
            eval_every: 100,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |e: &dyn std::fmt::Display| ExperimentError::Config(e.to_string());
        self.federation.validate().map_err(|e| invalid(&e))?;
        self.pdgd.validate().map_err(|e| invalid(&e))?;
        scenario_hooks(self.scenario, self.federation.num_clients).map_err(|e| invalid(&e))?;
        if self.scenario.kind == ScenarioKind::UnlearnNineHonestOneMalicious {
            self.unlearn.validate(&self.federation).map_err(|e| invalid(&e))?;
        } else if self.unlearn.delta_t != self.federation.delta_t {
            return Err(ExperimentError::Config(format!(
                "unlearn.delta_t {} differs from federation.delta_t {}",
                self.unlearn.delta_t, self.federation.delta_t
            )));
        }
        if self.repeats == 0 {
            return Err(ExperimentError::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(format!("serializing config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(format!("parsing config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text)
    }
}
