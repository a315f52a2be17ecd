//! Shared pipeline plumbing: dataset construction from config, checkpoint
//! loading with compatibility checks, and smoothed-model assembly.

use std::path::Path;

use tscert_core::masks::MaskSpec;
use tscert_core::nnkit::{self, ModelParams};
use tscert_core::smoothing::{SmoothedModel, SmoothingConfig, SmoothingMode};
use tscert_core::tsdata::{self, Dataset, Delimiter, Split};

use crate::config::{Config, DatasetKind, DatasetSection};
use crate::error::CliError;

/// Build one split of the configured dataset.
pub fn build_split(
    section: &DatasetSection,
    split: Split,
    delimiter_override: Option<Delimiter>,
) -> Result<Dataset, CliError> {
    let per_label = match split {
        Split::Train => section.train_per_label,
        Split::Test => section.test_per_label,
    };
    let seed = match split {
        Split::Train => section.train_seed,
        Split::Test => section.test_seed,
    };
    let dataset = match section.kind {
        DatasetKind::Cbf => tsdata::generate_cbf(
            per_label.expect("validated"),
            section.length.expect("validated"),
            seed.expect("validated"),
            split,
        )?,
        DatasetKind::Overlap => tsdata::generate_overlap(
            per_label.expect("validated"),
            section.length.expect("validated"),
            section.num_labels.expect("validated"),
            section.sep.expect("validated"),
            seed.expect("validated"),
            split,
        )?,
        DatasetKind::Ucr => {
            let path = match split {
                Split::Train => section.train_path.as_ref().expect("validated"),
                Split::Test => section.test_path.as_ref().expect("validated"),
            };
            let delimiter = delimiter_override
                .or(section.delimiter)
                .ok_or_else(|| CliError::config("dataset.delimiter: required for ucr datasets"))?;
            tsdata::load_ucr_file(path, delimiter, split)?
        }
    };
    let dataset = if section.znormalize { tsdata::znormalize(&dataset) } else { dataset };
    dataset.validate().map_err(CliError::from)?;
    Ok(dataset)
}

/// Load a checkpoint and check it matches the dataset shape.
pub fn load_compatible_checkpoint(path: &Path, dataset: &Dataset) -> Result<ModelParams, CliError> {
    let params = nnkit::load_checkpoint(path)?;
    if params.input_length() != dataset.length || params.num_labels() != dataset.num_labels {
        return Err(CliError::config(format!(
            "checkpoint {} has (T = {}, k = {}) but dataset {} has (T = {}, k = {})",
            path.display(),
            params.input_length(),
            params.num_labels(),
            dataset.name,
            dataset.length,
            dataset.num_labels
        )));
    }
    Ok(params)
}

/// Assemble the deployed smoothed model from checkpoints per the
/// configured mode.
pub fn assemble_model(
    cfg: &SmoothingConfig,
    checkpoints: &[ModelParams],
    length: usize,
) -> Result<SmoothedModel, CliError> {
    match cfg.mode {
        SmoothingMode::Single => {
            if checkpoints.len() != 1 {
                return Err(CliError::config(format!(
                    "single mode expects 1 checkpoint, got {}",
                    checkpoints.len()
                )));
            }
            Ok(SmoothedModel::Single(checkpoints[0].clone()))
        }
        SmoothingMode::SelfEnsemble => {
            if checkpoints.len() != 1 {
                return Err(CliError::config(format!(
                    "self_ensemble mode expects 1 checkpoint, got {}",
                    checkpoints.len()
                )));
            }
            let set = cfg
                .build_mask_set(length)?
                .expect("self-ensemble config has masks");
            Ok(SmoothedModel::SelfEnsemble(checkpoints[0].clone(), set))
        }
        SmoothingMode::DeepEnsemble => {
            if checkpoints.len() != cfg.m {
                return Err(CliError::config(format!(
                    "deep_ensemble mode expects m = {} checkpoints, got {}",
                    cfg.m,
                    checkpoints.len()
                )));
            }
            Ok(SmoothedModel::DeepEnsemble(checkpoints.to_vec()))
        }
    }
}

/// Mask set for an attack setup described outside the [smoothing] section.
pub fn setup_mask_set(
    m: usize,
    kind: tscert_core::masks::MaskKind,
    keep_ratio: f64,
    mask_seed: u64,
    length: usize,
) -> Result<tscert_core::masks::MaskSet, CliError> {
    let spec = MaskSpec::new(kind, keep_ratio, length)?;
    Ok(tscert_core::masks::fixed_mask_set(mask_seed, m, &spec)?)
}

/// Resolve the dataset name used in report tables.
pub fn dataset_display_name(config: &Config) -> String {
    match config.dataset.kind {
        DatasetKind::Cbf => "cbf".to_string(),
        DatasetKind::Overlap => "overlap".to_string(),
        DatasetKind::Ucr => config
            .dataset
            .train_path
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "ucr".to_string()),
    }
}
