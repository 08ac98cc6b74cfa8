use std::path::Path;

use anyhow::{Context, Result};
use hetcd::cae::CaeConfig;
use hetcd::occ::{FeatureVariant, Method, MlpConfig};
use hetcd::raster::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccSettings {
    pub variant: FeatureVariant,
    pub method: Method,
    pub npos: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for OccSettings {
    fn default() -> Self {
        OccSettings { variant: FeatureVariant::Full, method: Method::TwoStep, npos: 500, seed: 0, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub grid: Vec<usize>,
    pub reps: usize,
    pub jobs: usize,
    pub seed: u64,
    /// `method:variant` pairs; empty means the standard five.
    pub methods: Vec<String>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        let d = hetcd::eval::AblationConfig::default();
        AblationSettings { grid: d.grid, reps: d.reps, jobs: 1, seed: 0, methods: Vec::new() }
    }
}

/// Everything a run can be configured with. Loaded from TOML, then
/// overridden by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub cae: CaeConfig,
    pub occ: OccSettings,
    pub mlp: MlpConfig,
    pub ablation: AblationSettings,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| crate::usage(format!("invalid config {}: {e}", path.display())))
    }
}
