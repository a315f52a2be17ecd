//! Run configuration: versioned TOML with sections. Unknown keys are
//! rejected, semantic violations are reported with their field path, and
//! every random choice is pinned by a named seed.
//!
//! A config file can also be a run manifest: when the file carries a
//! top-level `manifest_version`, the embedded `[config]` table is
//! extracted, which is how a run is reproduced from its manifest.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use tscert_core::masks::MaskKind;
use tscert_core::nnkit::{ConvBlock, ModelConfig, Optimizer, TrainConfig};
use tscert_core::smoothing::{MaskParams, SmoothingConfig, SmoothingMode};
use tscert_core::tsdata::Delimiter;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub smoothing: Option<SmoothingSection>,
    #[serde(default)]
    pub certify: Option<CertifySection>,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
    #[serde(default)]
    pub report: Option<ReportSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cbf,
    Overlap,
    Ucr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    #[serde(default)]
    pub znormalize: bool,
    // Generators (cbf, overlap).
    #[serde(default)]
    pub train_per_label: Option<usize>,
    #[serde(default)]
    pub test_per_label: Option<usize>,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub train_seed: Option<u64>,
    #[serde(default)]
    pub test_seed: Option<u64>,
    // Overlap only.
    #[serde(default)]
    pub num_labels: Option<usize>,
    #[serde(default)]
    pub sep: Option<f64>,
    // UCR files.
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub delimiter: Option<Delimiter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub seed: u64,
}

impl ModelSection {
    /// Instantiate for a concrete dataset shape.
    pub fn to_model_config(&self, input_length: usize, num_labels: usize) -> Result<ModelConfig, CliError> {
        if self.channels.len() != self.kernels.len() {
            return Err(CliError::config(format!(
                "model.channels has {} entries but model.kernels has {}",
                self.channels.len(),
                self.kernels.len()
            )));
        }
        if self.channels.is_empty() {
            return Err(CliError::config("model.channels: at least one block required"));
        }
        Ok(ModelConfig {
            input_length,
            num_labels,
            blocks: self
                .channels
                .iter()
                .zip(&self.kernels)
                .map(|(&channels, &kernel)| ConvBlock { channels, kernel })
                .collect(),
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_adam_beta1() -> f64 {
    0.9
}
fn default_adam_beta2() -> f64 {
    0.999
}
fn default_adam_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default = "default_adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_adam_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_epsilon")]
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: match self.optimizer {
                OptimizerKind::Sgd => Optimizer::Sgd,
                OptimizerKind::Adam => Optimizer::Adam {
                    beta1: self.adam_beta1,
                    beta2: self.adam_beta2,
                    epsilon: self.adam_epsilon,
                },
            },
            seed: self.seed,
        }
    }
}

fn default_num_draws() -> usize {
    1000
}
fn default_beta() -> f64 {
    0.001
}
fn default_m() -> usize {
    1
}
fn default_keep_ratio() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    pub sigma: f64,
    pub mode: SmoothingMode,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub mask_kind: Option<MaskKind>,
    #[serde(default = "default_keep_ratio")]
    pub keep_ratio: f64,
    #[serde(default = "default_num_draws")]
    pub num_draws: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub base_seed: u64,
}

impl SmoothingSection {
    pub fn to_smoothing_config(&self) -> Result<SmoothingConfig, CliError> {
        let mask = match self.mode {
            SmoothingMode::SelfEnsemble => {
                let kind = self.mask_kind.ok_or_else(|| {
                    CliError::config("smoothing.mask_kind: required for self_ensemble mode")
                })?;
                Some(MaskParams { kind, keep_ratio: self.keep_ratio })
            }
            _ => None,
        };
        let cfg = SmoothingConfig {
            sigma: self.sigma,
            mode: self.mode,
            m: self.m,
            mask,
            num_draws: self.num_draws,
            beta: self.beta,
            base_seed: self.base_seed,
        };
        cfg.validate().map_err(|e| CliError::config(format!("smoothing: {e}")))?;
        Ok(cfg)
    }
}

fn default_radius_grid_max() -> f64 {
    2.0
}
fn default_radius_grid_points() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    pub checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub max_samples: Option<usize>,
    #[serde(default = "default_radius_grid_max")]
    pub radius_grid_max: f64,
    #[serde(default = "default_radius_grid_points")]
    pub radius_grid_points: usize,
}

fn default_steps() -> usize {
    40
}
fn default_eot_draws() -> usize {
    16
}
fn default_n_eval() -> usize {
    200
}
fn default_attack_samples() -> usize {
    100
}
fn default_epsilons() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_eot_draws")]
    pub eot_draws: usize,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_attack_samples")]
    pub max_samples: usize,
    pub seed: u64,
    pub setups: Vec<AttackSetup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupMode {
    Benign,
    Single,
    SelfEnsemble,
    DeepEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSetup {
    pub name: String,
    pub mode: SetupMode,
    pub checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub mask_kind: Option<MaskKind>,
    #[serde(default)]
    pub keep_ratio: Option<f64>,
    #[serde(default)]
    pub mask_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateKind {
    EnsembleSize,
    KeepRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub kind: AblateKind,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub keep_ratios: Option<Vec<f64>>,
    #[serde(default)]
    pub mask_kinds: Option<Vec<MaskKind>>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub max_samples: Option<usize>,
}

fn default_surface_sigma() -> f64 {
    1.0
}
fn default_surface_alphas() -> Vec<f64> {
    vec![1.5, 2.0, 4.0, 8.0, 16.0, 32.0]
}
fn default_surface_pa_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub manifests: Vec<PathBuf>,
    #[serde(default = "default_surface_sigma")]
    pub surface_sigma: f64,
    #[serde(default = "default_surface_alphas")]
    pub surface_alphas: Vec<f64>,
    #[serde(default = "default_surface_pa_points")]
    pub surface_pa_points: usize,
}

impl Config {
    /// Parse a config file, or extract the embedded config from a run
    /// manifest (detected by a top-level `manifest_version` key).
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        let value: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut config: Config = if value.get("manifest_version").is_some() {
            let manifest: crate::manifest::Manifest = value
                .try_into()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            manifest.check_version()?;
            manifest.config
        } else {
            value
                .try_into()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        };
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                config.schema_version
            )));
        }
        config.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    /// Semantic validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Cbf | DatasetKind::Overlap => {
                for (field, present) in [
                    ("dataset.train_per_label", d.train_per_label.is_some()),
                    ("dataset.test_per_label", d.test_per_label.is_some()),
                    ("dataset.length", d.length.is_some()),
                    ("dataset.train_seed", d.train_seed.is_some()),
                    ("dataset.test_seed", d.test_seed.is_some()),
                ] {
                    if !present {
                        return Err(CliError::config(format!("{field}: required for generated datasets")));
                    }
                }
                if d.kind == DatasetKind::Overlap {
                    if d.num_labels.is_none() {
                        return Err(CliError::config("dataset.num_labels: required for overlap"));
                    }
                    if d.sep.is_none() {
                        return Err(CliError::config("dataset.sep: required for overlap"));
                    }
                }
            }
            DatasetKind::Ucr => {
                if d.train_path.is_none() || d.test_path.is_none() {
                    return Err(CliError::config(
                        "dataset.train_path and dataset.test_path: required for ucr datasets",
                    ));
                }
            }
        }
        if let Some(attack) = &self.attack {
            if attack.epsilons.is_empty() {
                return Err(CliError::config("attack.epsilons: list must not be empty"));
            }
            if attack.setups.is_empty() {
                return Err(CliError::config("attack.setups: at least one setup required"));
            }
            for setup in &attack.setups {
                if setup.checkpoints.is_empty() {
                    return Err(CliError::config(format!(
                        "attack.setups.{}.checkpoints: must not be empty",
                        setup.name
                    )));
                }
                if setup.mode == SetupMode::SelfEnsemble
                    && (setup.mask_kind.is_none() || setup.m.is_none() || setup.mask_seed.is_none())
                {
                    return Err(CliError::config(format!(
                        "attack.setups.{}: self_ensemble needs m, mask_kind, mask_seed",
                        setup.name
                    )));
                }
            }
        }
        if let Some(ablate) = &self.ablate {
            match ablate.kind {
                AblateKind::EnsembleSize => {
                    if ablate.sizes.is_none() {
                        return Err(CliError::config("ablate.sizes: required for ensemble_size"));
                    }
                    if ablate.checkpoint.is_none() {
                        return Err(CliError::config("ablate.checkpoint: required for ensemble_size"));
                    }
                }
                AblateKind::KeepRatio => {
                    if ablate.keep_ratios.is_none() {
                        return Err(CliError::config("ablate.keep_ratios: required for keep_ratio"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Make all referenced paths absolute relative to the config location,
    /// so a manifest echo reproduces the run from anywhere.
    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(p) = self.dataset.train_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.dataset.test_path.as_mut() {
            resolve(p);
        }
        if let Some(certify) = self.certify.as_mut() {
            certify.checkpoints.iter_mut().for_each(resolve);
        }
        if let Some(attack) = self.attack.as_mut() {
            for setup in &mut attack.setups {
                setup.checkpoints.iter_mut().for_each(resolve);
            }
        }
        if let Some(ablate) = self.ablate.as_mut() {
            if let Some(p) = ablate.checkpoint.as_mut() {
                resolve(p);
            }
        }
        if let Some(report) = self.report.as_mut() {
            report.manifests.iter_mut().for_each(resolve);
        }
    }

    pub fn require_model(&self) -> Result<&ModelSection, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::config("[model] section required"))
    }

    pub fn require_train(&self) -> Result<&TrainSection, CliError> {
        self.train.as_ref().ok_or_else(|| CliError::config("[train] section required"))
    }

    pub fn require_smoothing(&self) -> Result<&SmoothingSection, CliError> {
        self.smoothing.as_ref().ok_or_else(|| CliError::config("[smoothing] section required"))
    }
}
