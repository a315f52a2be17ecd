//! Run manifests: versioned TOML records carrying the full resolved
//! config, all base seeds, output file names, and summary metrics —
//! enough to reproduce a run bit-for-bit with the same build.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::CliError;
use crate::tables::write_atomic;

pub const MANIFEST_VERSION: u32 = 1;

/// Named base seeds gathered from the resolved config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSummary {
    #[serde(default)]
    pub dataset_train: Option<u64>,
    #[serde(default)]
    pub dataset_test: Option<u64>,
    #[serde(default)]
    pub model: Option<u64>,
    #[serde(default)]
    pub train: Option<u64>,
    #[serde(default)]
    pub smoothing_base: Option<u64>,
    #[serde(default)]
    pub attack: Option<u64>,
}

impl SeedSummary {
    pub fn from_config(config: &Config) -> Self {
        SeedSummary {
            dataset_train: config.dataset.train_seed,
            dataset_test: config.dataset.test_seed,
            model: config.model.as_ref().map(|m| m.seed),
            train: config.train.as_ref().map(|t| t.seed),
            smoothing_base: config.smoothing.as_ref().map(|s| s.base_seed),
            attack: config.attack.as_ref().map(|a| a.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub toolkit_version: String,
    pub command: String,
    pub wall_clock_seconds: f64,
    pub config: Config,
    pub seeds: SeedSummary,
    /// Output file names relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Summary metrics (ACR, accuracies, ASR per setup/ε, ...).
    pub metrics: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, config: Config) -> Self {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            wall_clock_seconds: 0.0,
            seeds: SeedSummary::from_config(&config),
            config,
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn check_version(&self) -> Result<(), CliError> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(CliError::config(format!(
                "manifest_version: expected {MANIFEST_VERSION}, got {}",
                self.manifest_version
            )));
        }
        Ok(())
    }

    /// Read and schema-check a manifest; unknown fields are rejected.
    pub fn read(path: &Path) -> Result<Manifest, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("manifest {}: {e}", path.display())))?;
        manifest.check_version()?;
        Ok(manifest)
    }

    /// Write to `dir/manifest.toml` after verifying that every named
    /// output exists there.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        for name in &self.outputs {
            let p = dir.join(name);
            if !p.exists() {
                return Err(CliError::Other(format!(
                    "manifest names missing output file {}",
                    p.display()
                )));
            }
        }
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::Other(format!("manifest serialization: {e}")))?;
        let path = dir.join("manifest.toml");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
