//! JSON run-manifest file. Every CLI flag overrides its file
//! counterpart; unknown keys are rejected with the offending key named.

use epd_core::data::{FilterSpec, SplitSpec, SyntheticSpec};
use epd_core::error::{Error, Result};
use epd_core::experiments::GridSpec;
use epd_core::nn::Arch;
use epd_core::train::TrainConfig;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<Arch>,
    pub dense_size: Option<usize>,
    pub ps: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub model: ModelSection,
    pub train: Option<TrainConfig>,
    pub filter: Option<FilterSpec>,
    pub split: Option<SplitSpec>,
    pub grid: Option<GridSpec>,
    pub synth: Option<SyntheticSpec>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}
