use std::fs;
use std::path::{Path, PathBuf};

use patternnet::patternnet::PatternNetConfig;
use patternnet::training::TrainConfig;
use patternnet::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs, stored as TOML. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible runs.
    pub threads: Option<usize>,
    pub model: PatternNetConfig,
    /// Optimization settings, including `seed` and `epochs`.
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
