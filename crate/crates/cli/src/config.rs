//! Run configuration: JSON file merged with flag overrides; the fully
//! resolved document is written alongside every command's outputs.

use std::path::Path;

use medmamba_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, Result};

fn default_epochs() -> usize {
    20
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRunConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stop_at_val_acc: Option<f64>,
    #[serde(default = "ModelConfig::tiny")]
    pub model: ModelConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: default_epochs(),
            lr: default_lr(),
            batch_size: default_batch(),
            seed: 0,
            stop_at_val_acc: None,
            model: ModelConfig::tiny(),
        }
    }
}

impl TrainRunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(TrainRunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::input(format!("cannot read config {}: {}", p.display(), e))
                })?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

/// Writes the fully resolved configuration of a run as pretty JSON.
pub fn emit_resolved_config<T: Serialize>(path: &Path, config: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::runtime(format!("cannot serialize config: {}", e)))?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}
