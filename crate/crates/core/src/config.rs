//! Run configuration: one TOML-serializable tree covering every module,
//! with `v1`, `v2` and `toy` presets and the three ablation switches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::predictor::F0TrainConfig;
use crate::source::SourceConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name this config was derived from ("v1", "v2", "toy" or "custom").
    pub preset: String,
    pub sample_rate: u32,
    /// Master seed; model init, excitation noise and the training loop all
    /// derive from it.
    pub seed: u64,
    pub source: SourceConfig,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub f0_train: F0TrainConfig,
}

impl RunConfig {
    pub fn v1() -> Self {
        Self {
            preset: "v1".into(),
            sample_rate: crate::signal::SAMPLE_RATE,
            seed: 0,
            source: SourceConfig::default(),
            generator: GeneratorConfig::v1(),
            train: TrainConfig::full(),
            f0_train: F0TrainConfig::default(),
        }
    }

    pub fn v2() -> Self {
        Self {
            preset: "v2".into(),
            generator: GeneratorConfig::v2(),
            ..Self::v1()
        }
    }

    pub fn toy() -> Self {
        Self {
            preset: "toy".into(),
            generator: GeneratorConfig::toy(),
            train: TrainConfig::toy(),
            ..Self::v1()
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "v1" => Ok(Self::v1()),
            "v2" => Ok(Self::v2()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected v1, v2 or toy)"
            ))),
        }
    }

    /// Apply the ablation switches.
    pub fn ablate(&mut self, no_dnn: bool, no_subblock: bool, no_pc_resblock: bool) {
        if no_dnn {
            self.source.dnn_enabled = false;
        }
        if no_subblock {
            self.generator.subblock_enabled = false;
        }
        if no_pc_resblock {
            self.generator.pc_resblock_enabled = false;
        }
        if no_dnn || no_subblock || no_pc_resblock {
            self.preset = format!(
                "{}{}{}{}",
                self.preset,
                if no_dnn { "+no_dnn" } else { "" },
                if no_subblock { "+no_subblock" } else { "" },
                if no_pc_resblock { "+no_pc_resblock" } else { "" },
            );
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        self.source.validate()?;
        self.generator.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_toml())?;
        Ok(())
    }
}
