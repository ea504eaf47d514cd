use std::path::Path;

use serde::{Deserialize, Serialize};
use tse_core::net::NetConfig;
use tse_core::synth::DatasetConfig;
use tse_core::harness::TrainConfig;

/// Contents of a `--config` TOML file. Every section is optional; missing
/// keys take their defaults and unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Corpus generation settings.
    pub data: DatasetConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
