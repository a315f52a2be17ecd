//! Randomized-smoothing machinery: masked-noise training augmentation,
//! the deep-ensemble baseline, ensemble logit averaging, and Monte Carlo
//! vote collection.
//!
//! Certification draws one shared noise vector per iteration and feeds it
//! to every ensemble member (every mask, or every deep-ensemble model);
//! votes are argmaxes of the averaged logits. Noise for (sample, iteration)
//! is seeded as `derive(base_seed, sample_id, iteration)`, so runs are
//! reproducible and test samples can be processed concurrently.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masks::{self, Mask, MaskError, MaskKind, MaskSet, MaskSpec};
use crate::nnkit::{self, ModelConfig, ModelParams, NnError, TrainConfig, TrainOutcome};
use crate::seeds;
use crate::tsdata::Dataset;

/// Seed stream tags keeping training, mask-set, and certification noise
/// independent.
const STREAM_AUGMENT: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x22;
const STREAM_VOTES: u64 = 0x33;
const STREAM_MEMBER: u64 = 0x44;

/// Draws per forward batch during vote collection.
const VOTE_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum SmoothError {
    #[error("invalid smoothing config: {0}")]
    Config(String),
    #[error("dataset/model mismatch: {0}")]
    Mismatch(String),
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("vote histogram needs at least 2 labels")]
    TooFewLabels,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Smoothed-classifier flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    Single,
    SelfEnsemble,
    DeepEnsemble,
}

/// Mask family and keep ratio (the mask length comes from the dataset).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub kind: MaskKind,
    pub keep_ratio: f64,
}

/// Full smoothing/certification configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Noise standard deviation in signal units.
    pub sigma: f64,
    pub mode: SmoothingMode,
    /// Ensemble size (1 for single mode).
    pub m: usize,
    /// Mask parameters; required for self-ensemble.
    pub mask: Option<MaskParams>,
    /// Monte Carlo certification draws (n).
    pub num_draws: usize,
    /// Confidence level β for the vote bounds.
    pub beta: f64,
    pub base_seed: u64,
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), SmoothError> {
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(SmoothError::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.m == 0 {
            return Err(SmoothError::Config("ensemble size m must be >= 1".into()));
        }
        if self.num_draws == 0 {
            return Err(SmoothError::Config("num_draws must be >= 1".into()));
        }
        if !(0.0 < self.beta && self.beta < 1.0) {
            return Err(SmoothError::Config(format!("beta must be in (0, 1), got {}", self.beta)));
        }
        if self.mode == SmoothingMode::Single && self.m != 1 {
            return Err(SmoothError::Config(format!("single mode requires m = 1, got m = {}", self.m)));
        }
        if self.mode == SmoothingMode::SelfEnsemble && self.mask.is_none() {
            return Err(SmoothError::Config("self_ensemble mode requires mask parameters".into()));
        }
        if let Some(mask) = &self.mask {
            if !(0.0..=1.0).contains(&mask.keep_ratio) || mask.keep_ratio.is_nan() {
                return Err(SmoothError::Config(format!(
                    "keep_ratio must be in [0, 1], got {}",
                    mask.keep_ratio
                )));
            }
        }
        Ok(())
    }

    /// The fixed mask set used at certification time (self-ensemble only).
    pub fn build_mask_set(&self, length: usize) -> Result<Option<MaskSet>, SmoothError> {
        match (self.mode, &self.mask) {
            (SmoothingMode::SelfEnsemble, Some(mp)) => {
                let spec = MaskSpec::new(mp.kind, mp.keep_ratio, length)?;
                Ok(Some(masks::fixed_mask_set(self.base_seed, self.m, &spec)?))
            }
            _ => Ok(None),
        }
    }
}

/// Per-label Monte Carlo vote counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleCounts {
    counts: Vec<u64>,
    total: u64,
    top: usize,
    runner_up: usize,
}

impl SampleCounts {
    /// Build from a raw histogram; ties break to the lower index.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self, SmoothError> {
        if counts.len() < 2 {
            return Err(SmoothError::TooFewLabels);
        }
        let total = counts.iter().sum();
        let top = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty")
            .0;
        let runner_up = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != top)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least two labels")
            .0;
        Ok(SampleCounts { counts, total, top, runner_up })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, label: usize) -> u64 {
        self.counts[label]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Top vote-getter (the smoothed prediction).
    pub fn top(&self) -> usize {
        self.top
    }

    /// Second-place label.
    pub fn runner_up(&self) -> usize {
        self.runner_up
    }
}

/// A deployed smoothed classifier: the trained parameters plus the
/// ensemble structure used at inference.
#[derive(Debug, Clone)]
pub enum SmoothedModel {
    Single(ModelParams),
    SelfEnsemble(ModelParams, MaskSet),
    DeepEnsemble(Vec<ModelParams>),
}

impl SmoothedModel {
    pub fn num_labels(&self) -> usize {
        match self {
            SmoothedModel::Single(p) | SmoothedModel::SelfEnsemble(p, _) => p.num_labels(),
            SmoothedModel::DeepEnsemble(ps) => ps[0].num_labels(),
        }
    }

    pub fn input_length(&self) -> usize {
        match self {
            SmoothedModel::Single(p) | SmoothedModel::SelfEnsemble(p, _) => p.input_length(),
            SmoothedModel::DeepEnsemble(ps) => ps[0].input_length(),
        }
    }

    /// Ensemble size m.
    pub fn arity(&self) -> usize {
        match self {
            SmoothedModel::Single(_) => 1,
            SmoothedModel::SelfEnsemble(_, set) => set.len(),
            SmoothedModel::DeepEnsemble(ps) => ps.len(),
        }
    }

    pub fn masks(&self) -> Option<&MaskSet> {
        match self {
            SmoothedModel::SelfEnsemble(_, set) => Some(set),
            _ => None,
        }
    }
}

/// Apply a mask to every row of a batch.
fn mask_batch(batch: &ArrayView2<f64>, mask: &Mask) -> Array2<f64> {
    let mut out = Array2::zeros(batch.dim());
    for (mut dst, src) in out.rows_mut().into_iter().zip(batch.rows()) {
        mask.apply_to(
            src.to_slice().expect("contiguous"),
            dst.as_slice_mut().expect("contiguous"),
        );
    }
    out
}

/// Ensemble logits for a batch of (already noisy) inputs: the mean member
/// logits under one shared input, per Algorithm 2's inner average.
pub fn ensemble_logits_batch(
    model: &SmoothedModel,
    batch: ArrayView2<f64>,
) -> Result<Array2<f64>, SmoothError> {
    match model {
        SmoothedModel::Single(params) => Ok(nnkit::forward(params, batch)?),
        SmoothedModel::SelfEnsemble(params, set) => {
            let mut acc: Option<Array2<f64>> = None;
            for mask in set.masks() {
                let masked = mask_batch(&batch, mask);
                let logits = nnkit::forward(params, masked.view())?;
                acc = Some(match acc {
                    None => logits,
                    Some(a) => a + logits,
                });
            }
            Ok(acc.expect("mask set non-empty") / set.len() as f64)
        }
        SmoothedModel::DeepEnsemble(members) => {
            let mut acc: Option<Array2<f64>> = None;
            for params in members {
                let logits = nnkit::forward(params, batch)?;
                acc = Some(match acc {
                    None => logits,
                    Some(a) => a + logits,
                });
            }
            Ok(acc.expect("ensemble non-empty") / members.len() as f64)
        }
    }
}

/// Ensemble logits for one series.
pub fn ensemble_logits(model: &SmoothedModel, x: &[f64]) -> Result<Vec<f64>, SmoothError> {
    let batch = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    let logits = ensemble_logits_batch(model, batch)?;
    Ok(logits.row(0).to_vec())
}

/// Argmax with ties broken toward the lower index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Noise-and-mask a training batch: each series gets fresh Gaussian noise
/// and, when `mask` is given, a fresh mask, both derived from `seed`.
pub fn augment_batch(
    batch: &ArrayView2<f64>,
    sigma: f64,
    mask: Option<(&MaskParams, usize)>,
    seed: u64,
) -> Array2<f64> {
    let (rows, t) = batch.dim();
    let mut out = Array2::zeros((rows, t));
    for i in 0..rows {
        let mut rng = seeds::rng_from(seeds::derive2(seed, i as u64, 0));
        let src = batch.row(i);
        let mut dst = out.row_mut(i);
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *d = s + sigma * z;
        }
        if let Some((mp, length)) = mask {
            let spec = MaskSpec::new(mp.kind, mp.keep_ratio, length).expect("validated");
            let m = masks::generate_mask(&spec, seeds::derive2(seed, i as u64, 1));
            let slice = dst.as_slice_mut().expect("contiguous");
            let copy = slice.to_vec();
            m.apply_to(&copy, slice);
        }
    }
    out
}

fn dataset_matrix(dataset: &Dataset, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let t = dataset.length;
    let mut batch = Array2::zeros((indices.len(), t));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &idx) in indices.iter().enumerate() {
        let s = &dataset.series[idx];
        batch
            .row_mut(row)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&s.values);
        labels.push(s.label);
    }
    (batch, labels)
}

fn check_compat(dataset: &Dataset, model_cfg: &ModelConfig) -> Result<(), SmoothError> {
    if dataset.length != model_cfg.input_length {
        return Err(SmoothError::Mismatch(format!(
            "dataset length {} vs model input_length {}",
            dataset.length, model_cfg.input_length
        )));
    }
    if dataset.num_labels != model_cfg.num_labels {
        return Err(SmoothError::Mismatch(format!(
            "dataset has {} labels vs model num_labels {}",
            dataset.num_labels, model_cfg.num_labels
        )));
    }
    Ok(())
}

/// Train one base model with noise-under-mask augmentation.
///
/// Batches are drawn by a seeded permutation per epoch; each batch gets
/// fresh noise and (in self-ensemble mode) fresh masks. With `keep_ratio`
/// 1 this reduces to plain Gaussian-noise training, and with σ = 0 too it
/// is standard clean training.
pub fn train_smoothed(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    smoothing_cfg: &SmoothingConfig,
) -> Result<TrainOutcome, SmoothError> {
    smoothing_cfg.validate()?;
    check_compat(dataset, model_cfg)?;
    if dataset.is_empty() {
        return Err(SmoothError::EmptyTrainSet);
    }
    let params = nnkit::init_model(model_cfg)?;
    let mask = match smoothing_cfg.mode {
        SmoothingMode::SelfEnsemble => smoothing_cfg.mask,
        _ => None,
    };
    let sigma = smoothing_cfg.sigma;
    let base_seed = smoothing_cfg.base_seed;
    let length = dataset.length;
    let batch_size = train_cfg.batch_size;
    let shuffle_seed = train_cfg.seed;

    let outcome = nnkit::train(params, train_cfg, |epoch| {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = seeds::rng_from(seeds::derive2(shuffle_seed, STREAM_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        order
            .chunks(batch_size)
            .enumerate()
            .map(|(batch_idx, chunk)| {
                let (clean, labels) = dataset_matrix(dataset, chunk);
                let aug_seed =
                    seeds::derive3(base_seed, STREAM_AUGMENT, epoch as u64, batch_idx as u64);
                let noisy = augment_batch(
                    &clean.view(),
                    sigma,
                    mask.as_ref().map(|mp| (mp, length)),
                    aug_seed,
                );
                (noisy, labels)
            })
            .collect()
    })?;
    Ok(outcome)
}

/// Train `m` independent models with plain noise augmentation (no masks),
/// each from a member-derived seed.
pub fn train_deep_ensemble(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    sigma: f64,
    m: usize,
    base_seed: u64,
) -> Result<Vec<TrainOutcome>, SmoothError> {
    if m < 2 {
        return Err(SmoothError::Config(format!("deep ensemble needs m >= 2, got {m}")));
    }
    (0..m)
        .map(|member| {
            let mut member_model = model_cfg.clone();
            member_model.seed = seeds::derive2(model_cfg.seed, STREAM_MEMBER, member as u64);
            let mut member_train = train_cfg.clone();
            member_train.seed = seeds::derive2(train_cfg.seed, STREAM_MEMBER, member as u64);
            let member_cfg = SmoothingConfig {
                sigma,
                mode: SmoothingMode::Single,
                m: 1,
                mask: None,
                num_draws: 1,
                beta: 0.5,
                base_seed: seeds::derive2(base_seed, STREAM_MEMBER, member as u64),
            };
            train_smoothed(dataset, &member_model, &member_train, &member_cfg)
        })
        .collect()
}

/// Shared-noise Monte Carlo voting: `num_draws` iterations, each drawing
/// one noise vector (seeded `derive(noise_seed, iteration)`) fed to every
/// ensemble member, voting by the argmax of the averaged logits.
pub fn collect_votes(
    model: &SmoothedModel,
    x: &[f64],
    sigma: f64,
    num_draws: usize,
    noise_seed: u64,
) -> Result<SampleCounts, SmoothError> {
    if x.len() != model.input_length() {
        return Err(SmoothError::Mismatch(format!(
            "series length {} vs model input_length {}",
            x.len(),
            model.input_length()
        )));
    }
    let k = model.num_labels();
    let t = x.len();
    let mut counts = vec![0u64; k];
    let mut drawn = 0usize;
    while drawn < num_draws {
        let chunk = VOTE_CHUNK.min(num_draws - drawn);
        let mut noisy = Array2::zeros((chunk, t));
        for row in 0..chunk {
            let iteration = (drawn + row) as u64;
            let mut rng = seeds::rng_from(seeds::derive(noise_seed, iteration));
            let mut dst = noisy.row_mut(row);
            for (d, &s) in dst.iter_mut().zip(x.iter()) {
                let z: f64 = rng.sample(StandardNormal);
                *d = s + sigma * z;
            }
        }
        let logits = ensemble_logits_batch(model, noisy.view())?;
        for row in logits.rows() {
            counts[argmax_row(row.to_slice().expect("contiguous"))] += 1;
        }
        drawn += chunk;
    }
    SampleCounts::from_counts(counts)
}

/// Algorithm 2's sampling half: `num_draws` iterations of shared noise,
/// ensemble argmax votes, and the per-label histogram. Iteration noise is
/// seeded from `(base_seed, sample_id, iteration)`.
pub fn sample_counts(
    model: &SmoothedModel,
    x: &[f64],
    cfg: &SmoothingConfig,
    sample_id: u64,
) -> Result<SampleCounts, SmoothError> {
    cfg.validate()?;
    if model.arity() != cfg.m {
        return Err(SmoothError::Mismatch(format!(
            "model arity {} vs configured m {}",
            model.arity(),
            cfg.m
        )));
    }
    let noise_seed = seeds::derive2(cfg.base_seed, STREAM_VOTES, sample_id);
    collect_votes(model, x, cfg.sigma, cfg.num_draws, noise_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::{ConvBlock, Optimizer};
    use crate::tsdata::{self, Split};

    fn model_cfg(t: usize, k: usize) -> ModelConfig {
        ModelConfig {
            input_length: t,
            num_labels: k,
            blocks: vec![ConvBlock { channels: 4, kernel: 5 }],
            seed: 3,
        }
    }

    fn smoothing_cfg(mode: SmoothingMode, m: usize, keep: f64) -> SmoothingConfig {
        SmoothingConfig {
            sigma: 0.4,
            mode,
            m,
            mask: match mode {
                SmoothingMode::SelfEnsemble => {
                    Some(MaskParams { kind: MaskKind::Binomial, keep_ratio: keep })
                }
                _ => None,
            },
            num_draws: 100,
            beta: 0.001,
            base_seed: 17,
        }
    }

    #[test]
    fn sample_counts_sum_to_n() {
        let params = nnkit::init_model(&model_cfg(32, 3)).unwrap();
        let model = SmoothedModel::Single(params);
        let mut cfg = smoothing_cfg(SmoothingMode::Single, 1, 1.0);
        cfg.num_draws = 300;
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin()).collect();
        let counts = sample_counts(&model, &x, &cfg, 0).unwrap();
        assert_eq!(counts.total(), 300);
        assert_eq!(counts.counts().iter().sum::<u64>(), 300);
    }

    #[test]
    fn augment_identity_when_sigma_zero_and_no_mask() {
        let batch = Array2::from_shape_fn((3, 10), |(i, j)| (i * 10 + j) as f64 * 0.5 - 7.0);
        let out = augment_batch(&batch.view(), 0.0, None, 9);
        assert_eq!(out, batch);
    }

    #[test]
    fn augment_sigma_zero_with_mask_is_exactly_masked_x() {
        let batch = Array2::from_shape_fn((4, 12), |(i, j)| (i + j) as f64 + 1.0);
        let mp = MaskParams { kind: MaskKind::Binomial, keep_ratio: 0.5 };
        let out = augment_batch(&batch.view(), 0.0, Some((&mp, 12)), 21);
        for (i, (orig, got)) in batch.rows().into_iter().zip(out.rows()).enumerate() {
            let spec = MaskSpec::new(MaskKind::Binomial, 0.5, 12).unwrap();
            let mask = masks::generate_mask(&spec, seeds::derive2(21, i as u64, 1));
            for ((&o, &g), &b) in orig.iter().zip(got.iter()).zip(mask.bits()) {
                if b == 0 {
                    assert_eq!(g, 0.0);
                } else {
                    assert_eq!(g, o);
                }
            }
        }
    }

    #[test]
    fn augment_noise_std_concentrates() {
        // 10^5 coordinates at sigma 0.4: sample std within [0.395, 0.405].
        let t = 1000;
        let rows = 100;
        let batch = Array2::zeros((rows, t));
        let out = augment_batch(&batch.view(), 0.4, None, 5);
        let n = (rows * t) as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((0.395..=0.405).contains(&std), "std {std}");
    }

    #[test]
    fn constant_model_votes_for_lowest_label() {
        let params = ModelParams::zeroed(&model_cfg(16, 4)).unwrap();
        let model = SmoothedModel::Single(params);
        let cfg = smoothing_cfg(SmoothingMode::Single, 1, 1.0);
        let x = vec![0.25; 16];
        let counts = sample_counts(&model, &x, &cfg, 3).unwrap();
        assert_eq!(counts.counts(), &[100, 0, 0, 0]);
        assert_eq!(counts.top(), 0);
        assert_eq!(counts.runner_up(), 1);
    }

    #[test]
    fn sigma_zero_concentrates_votes() {
        let params = nnkit::init_model(&model_cfg(16, 3)).unwrap();
        let model = SmoothedModel::Single(params);
        let mut cfg = smoothing_cfg(SmoothingMode::Single, 1, 1.0);
        cfg.sigma = 0.0;
        let x: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let counts = sample_counts(&model, &x, &cfg, 1).unwrap();
        assert!(counts.counts().contains(&100));
    }

    #[test]
    fn sample_counts_reproduce_across_runs() {
        let params = nnkit::init_model(&model_cfg(24, 3)).unwrap();
        let spec = MaskSpec::new(MaskKind::Binomial, 0.9, 24).unwrap();
        let set = masks::fixed_mask_set(17, 5, &spec).unwrap();
        let model = SmoothedModel::SelfEnsemble(params, set);
        let cfg = smoothing_cfg(SmoothingMode::SelfEnsemble, 5, 0.9);
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let a = sample_counts(&model, &x, &cfg, 11).unwrap();
        let b = sample_counts(&model, &x, &cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_counts(&model, &x, &cfg, 12).unwrap();
        assert_eq!(c.total(), 100);
    }

    #[test]
    fn self_ensemble_m1_p1_bitwise_matches_single() {
        let params = nnkit::init_model(&model_cfg(20, 3)).unwrap();
        let spec = MaskSpec::new(MaskKind::Binomial, 1.0, 20).unwrap();
        let set = masks::fixed_mask_set(17, 1, &spec).unwrap();
        let self_model = SmoothedModel::SelfEnsemble(params.clone(), set);
        let single_model = SmoothedModel::Single(params);
        let self_cfg = smoothing_cfg(SmoothingMode::SelfEnsemble, 1, 1.0);
        let single_cfg = smoothing_cfg(SmoothingMode::Single, 1, 1.0);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 1.1).sin()).collect();
        let a = sample_counts(&self_model, &x, &self_cfg, 5).unwrap();
        let b = sample_counts(&single_model, &x, &single_cfg, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_order_does_not_change_ensemble_logits() {
        let params = nnkit::init_model(&model_cfg(20, 3)).unwrap();
        let spec = MaskSpec::new(MaskKind::Binomial, 0.8, 20).unwrap();
        let set = masks::fixed_mask_set(23, 4, &spec).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).cos()).collect();
        let forward_mean = |masks_in_order: Vec<&Mask>| {
            let batch = ArrayView2::from_shape((1, 20), &x).unwrap();
            let mut acc = [0.0; 3];
            for mask in &masks_in_order {
                let masked = mask_batch(&batch, mask);
                let logits = nnkit::forward(&params, masked.view()).unwrap();
                for (a, &l) in acc.iter_mut().zip(logits.row(0)) {
                    *a += l;
                }
            }
            acc.iter().map(|v| v / masks_in_order.len() as f64).collect::<Vec<f64>>()
        };
        let fwd: Vec<&Mask> = set.masks().iter().collect();
        let rev: Vec<&Mask> = set.masks().iter().rev().collect();
        let a = forward_mean(fwd);
        let b = forward_mean(rev);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_model_gives_uniform_logits_under_any_mask() {
        let params = ModelParams::zeroed(&model_cfg(20, 3)).unwrap();
        let spec = MaskSpec::new(MaskKind::Continuous, 0.6, 20).unwrap();
        let set = masks::fixed_mask_set(5, 3, &spec).unwrap();
        let model = SmoothedModel::SelfEnsemble(params, set);
        let x = vec![1.5; 20];
        let logits = ensemble_logits(&model, &x).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn deep_ensemble_logits_are_arithmetic_mean_of_members() {
        let a = nnkit::init_model(&model_cfg(16, 3)).unwrap();
        let mut cfg_b = model_cfg(16, 3);
        cfg_b.seed = 99;
        let b = nnkit::init_model(&cfg_b).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let batch = ArrayView2::from_shape((1, 16), &x).unwrap();
        let la = nnkit::forward(&a, batch).unwrap();
        let lb = nnkit::forward(&b, batch).unwrap();
        let model = SmoothedModel::DeepEnsemble(vec![a, b]);
        let got = ensemble_logits(&model, &x).unwrap();
        for (i, &g) in got.iter().enumerate() {
            let want = (la[[0, i]] + lb[[0, i]]) / 2.0;
            assert!((g - want).abs() < 1e-15);
        }
    }

    #[test]
    fn train_smoothed_learns_cbf_at_desk_scale() {
        let train = tsdata::generate_cbf(10, 64, 1, Split::Train).unwrap();
        let cfg = ModelConfig {
            input_length: 64,
            num_labels: 3,
            blocks: vec![ConvBlock { channels: 8, kernel: 9 }, ConvBlock { channels: 8, kernel: 9 }],
            seed: 3,
        };
        let tcfg = TrainConfig {
            epochs: 150,
            batch_size: 10,
            learning_rate: 3e-3,
            optimizer: Optimizer::default(),
            seed: 4,
        };
        let scfg = SmoothingConfig {
            sigma: 0.4,
            mode: SmoothingMode::Single,
            m: 1,
            mask: None,
            num_draws: 1,
            beta: 0.5,
            base_seed: 8,
        };
        let out = train_smoothed(&train, &cfg, &tcfg, &scfg).unwrap();
        // Clean train accuracy should be high: CBF is nearly separable.
        let (batch, labels) = dataset_matrix(&train, &(0..train.len()).collect::<Vec<_>>());
        let logits = nnkit::forward(&out.params, batch.view()).unwrap();
        let correct = logits
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(row, &l)| argmax_row(row.to_slice().unwrap()) == l)
            .count();
        assert!(correct as f64 / labels.len() as f64 >= 0.9, "accuracy {correct}/30");
    }

    #[test]
    fn deep_ensemble_members_differ() {
        let train = tsdata::generate_overlap(5, 24, 2, 6.0, 2, Split::Train).unwrap();
        let cfg = model_cfg(24, 2);
        let tcfg = TrainConfig {
            epochs: 5,
            batch_size: 5,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 4,
        };
        let outs = train_deep_ensemble(&train, &cfg, &tcfg, 0.2, 2, 99).unwrap();
        assert_eq!(outs.len(), 2);
        assert_ne!(outs[0].params, outs[1].params);
    }

    #[test]
    fn config_validation_rejects_bad_combinations() {
        let mut cfg = smoothing_cfg(SmoothingMode::Single, 1, 1.0);
        cfg.m = 3;
        assert!(matches!(cfg.validate(), Err(SmoothError::Config(_))));
        let mut cfg = smoothing_cfg(SmoothingMode::SelfEnsemble, 5, 0.9);
        cfg.mask = None;
        assert!(matches!(cfg.validate(), Err(SmoothError::Config(_))));
        let mut cfg = smoothing_cfg(SmoothingMode::Single, 1, 1.0);
        cfg.sigma = -0.1;
        assert!(matches!(cfg.validate(), Err(SmoothError::Config(_))));
    }

    #[test]
    fn larger_n_tightens_bounds_on_average() {
        use crate::certmath;
        // Statistical check on nested draws: the mean Clopper-Pearson
        // lower bound at p = 0.8 grows with n.
        let mut rng = seeds::rng_from(31);
        let mean_lower = |n: u64, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut acc = 0.0;
            for _ in 0..200 {
                let successes = (0..n).filter(|_| rng.gen::<f64>() < 0.8).count() as u64;
                acc += certmath::clopper_pearson_lower(successes, n, 0.0005);
            }
            acc / 200.0
        };
        let small = mean_lower(200, &mut rng);
        let large = mean_lower(800, &mut rng);
        assert!(large > small, "n=800 bound {large} vs n=200 bound {small}");
    }
}
