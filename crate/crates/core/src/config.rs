//! The versioned JSON run configuration consumed by the command line.

use serde::{Deserialize, Serialize};

use crate::channel::FadingSpec;
use crate::dataset::{DatasetConfig, Split};
use crate::error::{Error, Result};
use crate::training::{ModelsConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: Split::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random cases for the exact-action suites.
    pub cases: usize,
    /// Random configurations per model kind for the gradient suite.
    pub gradient_configs: usize,
    pub fig2_trials: usize,
    pub fig2_kaiser_beta: f64,
    pub fig2_channel: FadingSpec,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            gradient_configs: 10,
            fig2_trials: 100,
            fig2_kaiser_beta: 8.6,
            fig2_channel: FadingSpec::rayleigh(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            dataset: DatasetConfig::default(),
            model: ModelsConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                cfg.config_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.charrnet.backbone.validate()?;
        self.model.baseline.backbone.validate()?;
        self.train.validate()?;
        self.verify.fig2_channel.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
