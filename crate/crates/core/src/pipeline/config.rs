use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ProbeProtocol;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Store cached glyph PNGs and contact sheets dark-on-light.
    pub invert_png: bool,
    /// Network shape; `image_size` must equal the manifest's render size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Probe settings; target and kind are filled in per probe.
    pub probe: ProbeProtocol,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            manifest: PathBuf::from("assets/desk_corpus.toml"),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            invert_png: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeProtocol::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a TOML config; relative `manifest` and `out_dir` are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        let p = &self.probe;
        if p.trials == 0 || p.epochs == 0 || p.batch_size == 0 || p.hidden == 0 {
            return Err(Error::InvalidConfig("probe trials, epochs, batch size and width must be positive".into()));
        }
        if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("probe learning rate must be positive".into()));
        }
        Ok(())
    }
}
