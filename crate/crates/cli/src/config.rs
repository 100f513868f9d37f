//! TOML configuration. Precedence is defaults < file < command-line flags.

use std::fs;
use std::path::Path;

use mppde_core::classical::SolveConfig;
use mppde_core::model::ModelConfig;
use mppde_core::pde::{Preset, PresetConfig};
use mppde_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preset: Preset,
    pub n_traj: usize,
    pub n_t: usize,
    pub n_x: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { preset: Preset::E1, n_traj: 16, n_t: 100, n_x: 40, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    pub repeats: usize,
    pub n_t: usize,
    pub n_x: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_traj: usize,
    /// Oversampling used when the classical scheme is the solver under test.
    pub weno_fine_factor: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.01, repeats: 3, n_t: 100, n_x: vec![40], seeds: vec![0], n_traj: 4, weno_fine_factor: 1 }
    }
}

/// Everything a command may read. The `solver` section also sets the
/// reference solve used for truth data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub preset: PresetConfig,
    pub solver: SolveConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Defaults, or defaults overlaid with the file at `path`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Assigns `value` to `slot` when the flag was given.
pub fn overlay<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
