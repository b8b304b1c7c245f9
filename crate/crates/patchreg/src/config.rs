//! Run configuration file: `{"model": ModelConfig, "train": TrainConfig,
//! "manifest": path}`. Field names mirror the core structs exactly.

use std::path::{Path, PathBuf};

use patchreg_core::models::PRESETS;
use patchreg_core::training::TrainConfig;
use patchreg_core::{Family, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Resolved against the config file's directory when relative.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

/// Desk-scale preset names, one per family.
pub const DESK_PRESETS: [&str; 3] = ["pure_mlp_desk", "mlp_mixer_desk", "swin_trans_desk"];

/// Model config for a shipped preset or a desk preset at `desk_size`.
pub fn preset_model(name: &str, desk_size: usize) -> Result<ModelConfig> {
    if let Some(family) = name.strip_suffix("_desk").and_then(Family::parse) {
        return Ok(ModelConfig::desk(family, desk_size));
    }
    ModelConfig::preset(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown preset `{name}`; expected one of {}, {}",
            PRESETS.join(", "),
            DESK_PRESETS.join(", ")
        ))
    })
}

impl RunConfig {
    pub fn from_preset(name: &str, desk_size: usize) -> Result<Self> {
        Ok(RunConfig {
            model: preset_model(name, desk_size)?,
            train: TrainConfig::default(),
            manifest: None,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg =
            RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(path.parent().unwrap_or(Path::new(".")).join(m));
            }
        }
        Ok(cfg)
    }

    /// Canonical text form, also written next to every run's artifacts.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
