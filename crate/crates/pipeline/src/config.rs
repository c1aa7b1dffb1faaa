//! Key-value (TOML) configuration shared by the CLI commands.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wmsync_core::QimConfig;
use wmsync_nets::{NetConfig, TrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Layout key for new models.
    pub key: u64,
    /// Rounds of residual matching during template recovery.
    pub refine: usize,
    pub qim: QimConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            key: 7,
            refine: crate::pipeline::DEFAULT_REFINE,
            qim: QimConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::desk(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.qim.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = PipelineConfig::from_toml("key = 11\n[qim]\nstep = 5.0\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.key, 11);
        assert_eq!(cfg.qim.step, 5.0);
        assert_eq!(cfg.qim.embed_scale, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.net, NetConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("colour = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[qim]\nstep = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml("[train]\nlambda = 2.0\n").is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }
}
