//! TOML run configuration. Every section and key is optional and falls back to
//! the defaults of the corresponding library type.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Splits;
use crate::error::{Error, Result};
use crate::eval::LatencyConfig;
use crate::inference::InferenceOptions;
use crate::sync::DEFAULT_THRESHOLD;
use crate::synthgen::{ExpressionScript, SceneConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Frames of synthetic data to generate.
    pub length: usize,
    pub seed: u64,
    /// Explicit split boundaries; `None` uses [`Splits::default_for`].
    pub train_end: Option<usize>,
    pub val_end: Option<usize>,
    pub sync_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            length: 12_000,
            seed: 0,
            train_end: None,
            val_end: None,
            sync_threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl DataConfig {
    pub fn splits(&self) -> Result<Splits> {
        match (self.train_end, self.val_end) {
            (None, None) => Ok(Splits::default_for(self.length)),
            (Some(t), Some(v)) => {
                let s = Splits::new(t, v);
                s.validate(self.length)?;
                Ok(s)
            }
            _ => Err(Error::InvalidConfig(
                "set both data.train_end and data.val_end or neither".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub script: ExpressionScript,
    pub train: TrainConfig,
    pub inference: InferenceOptions,
    pub bench: LatencyConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.splits()?;
        if !(self.data.sync_threshold > 0.0 && self.data.sync_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sync_threshold {} not in (0, 1)",
                self.data.sync_threshold
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("config serializes"),
        ))
    }
}
