//! Top-level configuration file with `backbone`, `dsam`, `cells`, `search`,
//! `train` and `data` sections. Missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::{CellsConfig, DsamConfig, ModelConfig};
use crate::search::SearchConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backbone: BackboneConfig,
    pub dsam: DsamConfig,
    pub cells: CellsConfig,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub data: SynthConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            dsam: self.dsam.clone(),
            cells: self.cells.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.model().validate().map_err(wrap)?;
        self.search.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        Ok(())
    }
}
