//! Optional TOML config file. Command-line flags take precedence over values
//! read here, which in turn take precedence over built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default, rename = "match")]
    pub matching: MatchSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub threshold: Option<f64>,
    pub num_calib: Option<usize>,
    pub seed: Option<u64>,
    pub exclusion_radius: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSection {
    pub window: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub gt_mode: Option<String>,
    pub tolerance: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub places: Option<usize>,
    pub calib: Option<usize>,
    pub queries: Option<usize>,
    pub channels: Option<usize>,
    pub signal: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub noise_scale: Option<f64>,
    pub shift: Option<f64>,
    pub jitter: Option<f64>,
    pub seed: Option<u64>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text)
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}
