//! Evaluation: certification records and metrics (ACR, certified accuracy
//! at radius), margin-variance statistics, and the ensemble-size and
//! keep-ratio ablation runners.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certmath::{self, CertError};
use crate::masks::MaskKind;
use crate::nnkit::{NnError, TrainConfig};
use crate::seeds;
use crate::smoothing::{
    self, ensemble_logits_batch, MaskParams, SmoothError, SmoothedModel, SmoothingConfig,
    SmoothingMode,
};
use crate::tsdata::Dataset;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to aggregate")]
    Empty,
    #[error("radius grid must be sorted ascending")]
    UnsortedGrid,
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-sample certification outcome, one row of the records table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub index: usize,
    pub true_label: usize,
    pub predicted: usize,
    pub radius: f64,
    pub abstained: bool,
    pub pa_lower: f64,
    pub pb_upper: f64,
}

impl CertificationRecord {
    pub fn correct(&self) -> bool {
        !self.abstained && self.predicted == self.true_label
    }
}

/// Average certified radius: wrong or abstained predictions contribute 0.
pub fn acr(records: &[CertificationRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = records.iter().filter(|r| r.correct()).map(|r| r.radius).sum();
    Ok(total / records.len() as f64)
}

/// Fraction of records predicted correctly with radius at least `r` and
/// no abstention.
pub fn certified_accuracy(records: &[CertificationRecord], r: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records.iter().filter(|rec| rec.correct() && rec.radius >= r).count();
    hits as f64 / records.len() as f64
}

/// Certified accuracy on an ascending radius grid; the column is
/// nonincreasing by construction.
pub fn accuracy_radius_curve(
    records: &[CertificationRecord],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>, EvalError> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedGrid);
    }
    Ok(grid.iter().map(|&r| (r, certified_accuracy(records, r))).collect())
}

/// Certify a test set: one record per sample, samples processed in
/// parallel with per-sample derived seeds.
pub fn certify_dataset(
    model: &SmoothedModel,
    test: &Dataset,
    cfg: &SmoothingConfig,
    max_samples: usize,
) -> Result<Vec<CertificationRecord>, EvalError> {
    let take = test.len().min(max_samples);
    (0..take)
        .into_par_iter()
        .map(|i| {
            let s = &test.series[i];
            let counts = smoothing::sample_counts(model, &s.values, cfg, i as u64)?;
            let cert = certmath::certify_counts(&counts, cfg.sigma, cfg.beta)?;
            Ok(CertificationRecord {
                index: i,
                true_label: s.label,
                predicted: cert.prediction,
                radius: cert.radius.radius,
                abstained: cert.radius.abstained,
                pa_lower: cert.bounds.pa_lower,
                pb_upper: cert.bounds.pb_upper,
            })
        })
        .collect()
}

/// Accuracy of the ensemble decision on clean (noise-free) inputs.
pub fn clean_accuracy(model: &SmoothedModel, dataset: &Dataset) -> Result<f64, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut batch = Array2::zeros((dataset.len(), dataset.length));
    for (mut row, s) in batch.rows_mut().into_iter().zip(&dataset.series) {
        row.as_slice_mut().expect("contiguous").copy_from_slice(&s.values);
    }
    let logits = ensemble_logits_batch(model, batch.view())?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&dataset.series)
        .filter(|(row, s)| {
            smoothing::argmax_row(row.to_slice().expect("contiguous")) == s.label
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Margin statistics of one sample under noise: the minimum margin
/// `min_{i != A} (c_A - c_i)` per draw, where A is the argmax of the mean
/// logits across draws.
#[derive(Debug, Clone)]
pub struct MarginStats {
    pub top_label: usize,
    pub min_margins: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Empirical P(all margins > 0).
    pub prob_all_positive: f64,
}

/// Sample `draws` shared-noise ensemble evaluations of `x` and summarize
/// the minimum classification margin.
pub fn margin_stats(
    model: &SmoothedModel,
    x: &[f64],
    sigma: f64,
    draws: usize,
    seed: u64,
) -> Result<MarginStats, EvalError> {
    if draws < 2 {
        return Err(EvalError::Config(format!("margin stats need >= 2 draws, got {draws}")));
    }
    let t = x.len();
    let k = model.num_labels();
    let mut logits = Array2::zeros((draws, k));
    let chunk_size = 256usize;
    let mut done = 0usize;
    while done < draws {
        let chunk = chunk_size.min(draws - done);
        let mut noisy = Array2::zeros((chunk, t));
        for row in 0..chunk {
            let mut rng = seeds::rng_from(seeds::derive(seed, (done + row) as u64));
            let mut dst = noisy.row_mut(row);
            for (d, &s) in dst.iter_mut().zip(x) {
                let z: f64 = rng.sample(StandardNormal);
                *d = s + sigma * z;
            }
        }
        let out = ensemble_logits_batch(model, noisy.view())?;
        logits
            .slice_mut(ndarray::s![done..done + chunk, ..])
            .assign(&out);
        done += chunk;
    }

    let mean_logits = logits.mean_axis(ndarray::Axis(0)).expect("draws >= 2");
    let top = smoothing::argmax_row(mean_logits.as_slice().expect("contiguous"));
    let min_margins: Vec<f64> = logits
        .rows()
        .into_iter()
        .map(|row| {
            let ca = row[top];
            row.iter()
                .enumerate()
                .filter(|(i, _)| *i != top)
                .map(|(_, &ci)| ca - ci)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let n = min_margins.len() as f64;
    let mean = min_margins.iter().sum::<f64>() / n;
    let variance = min_margins.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
    let prob_all_positive = min_margins.iter().filter(|&&z| z > 0.0).count() as f64 / n;
    Ok(MarginStats { top_label: top, min_margins, mean, variance, prob_all_positive })
}

/// One ablation row: ACR and smoothed clean accuracy at ensemble size m.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSizeRow {
    pub m: usize,
    pub acr: f64,
    pub certified_accuracy_at_0: f64,
}

/// Certify one masked-trained model under self-ensembles of increasing
/// size. All sizes share the mask-set base seed, so smaller sets are
/// prefixes of larger ones.
pub fn ablate_ensemble_size(
    params: &crate::nnkit::ModelParams,
    test: &Dataset,
    sizes: &[usize],
    template: &SmoothingConfig,
    max_samples: usize,
) -> Result<Vec<EnsembleSizeRow>, EvalError> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Config("sizes must be sorted ascending".into()));
    }
    let mask = template
        .mask
        .ok_or_else(|| EvalError::Config("ensemble-size ablation needs mask params".into()))?;
    sizes
        .iter()
        .map(|&m| {
            let cfg = SmoothingConfig {
                mode: SmoothingMode::SelfEnsemble,
                m,
                mask: Some(mask),
                ..template.clone()
            };
            let set = cfg.build_mask_set(test.length)?.expect("self-ensemble");
            let model = SmoothedModel::SelfEnsemble(params.clone(), set);
            let records = certify_dataset(&model, test, &cfg, max_samples)?;
            Ok(EnsembleSizeRow {
                m,
                acr: acr(&records)?,
                certified_accuracy_at_0: certified_accuracy(&records, 0.0),
            })
        })
        .collect()
}

/// One keep-ratio ablation row.
#[derive(Debug, Clone, PartialEq)]
pub struct KeepRatioRow {
    pub kind: MaskKind,
    pub keep_ratio: f64,
    pub acr: f64,
    pub certified_accuracy_at_0: f64,
}

/// Train and certify one self-ensemble per (kind, keep-ratio): masking
/// applies both to training augmentation and to the fixed certification
/// masks, with paired seeds across rows.
#[allow(clippy::too_many_arguments)]
pub fn ablate_keep_ratio(
    train: &Dataset,
    test: &Dataset,
    model_cfg: &crate::nnkit::ModelConfig,
    train_cfg: &TrainConfig,
    kinds: &[MaskKind],
    keep_ratios: &[f64],
    template: &SmoothingConfig,
    max_samples: usize,
) -> Result<Vec<KeepRatioRow>, EvalError> {
    if keep_ratios.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(EvalError::Config("keep ratios must lie in [0, 1]".into()));
    }
    let mut rows = Vec::with_capacity(kinds.len() * keep_ratios.len());
    for &kind in kinds {
        for &keep_ratio in keep_ratios {
            let cfg = SmoothingConfig {
                mode: SmoothingMode::SelfEnsemble,
                mask: Some(MaskParams { kind, keep_ratio }),
                ..template.clone()
            };
            let outcome = smoothing::train_smoothed(train, model_cfg, train_cfg, &cfg)?;
            let set = cfg.build_mask_set(test.length)?.expect("self-ensemble");
            let model = SmoothedModel::SelfEnsemble(outcome.params, set);
            let records = certify_dataset(&model, test, &cfg, max_samples)?;
            rows.push(KeepRatioRow {
                kind,
                keep_ratio,
                acr: acr(&records)?,
                certified_accuracy_at_0: certified_accuracy(&records, 0.0),
            });
        }
    }
    Ok(rows)
}
