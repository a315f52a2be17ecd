//! PGD-ℓ2 attacker against benign, single-smoothed, and ensemble-smoothed
//! classifiers.
//!
//! Smoothed targets are attacked through expectation over transformation:
//! the cross-entropy gradient is averaged over `eot_draws` noise draws,
//! with the per-iteration noise shared across ensemble members exactly as
//! at certification time. Success is adjudicated against the target's
//! hard decision rule — a fresh-noise majority vote for smoothed targets.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnkit::{self, ModelParams, NnError};
use crate::seeds;
use crate::smoothing::{self, argmax_row, SmoothError, SmoothedModel};
use crate::tsdata::Dataset;

const STREAM_EOT: u64 = 0x51;
const STREAM_DECIDE: u64 = 0x52;
const STREAM_FALLBACK: u64 = 0x53;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    Config(String),
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("input length {got} does not match target length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {num_labels} labels")]
    BadLabel { label: usize, num_labels: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
}

/// PGD-ℓ2 hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// ℓ2 budget in signal units.
    pub epsilon: f64,
    pub steps: usize,
    /// Per-step length η.
    pub step_size: f64,
    /// Noise samples per gradient step on smoothed targets.
    pub eot_draws: usize,
    /// Majority-vote draws for success adjudication on smoothed targets.
    pub n_eval: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// The common schedule: 40 steps of η = 2ε/steps, EOT 16, 200-draw
    /// adjudication.
    pub fn for_epsilon(epsilon: f64, seed: u64) -> Self {
        let steps = 40;
        AttackConfig {
            epsilon,
            steps,
            step_size: (2.0 * epsilon / steps as f64).max(1e-12),
            eot_draws: 16,
            n_eval: 200,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(AttackError::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.step_size <= 0.0 || self.step_size.is_nan() {
            return Err(AttackError::Config(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if self.eot_draws == 0 {
            return Err(AttackError::Config("eot_draws must be >= 1".into()));
        }
        if self.n_eval == 0 {
            return Err(AttackError::Config("n_eval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of attacking one sample.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Vec<f64>,
    /// The deployed decision on the adversarial input differs from the
    /// true label.
    pub success: bool,
    /// Achieved ℓ2 distance from the clean input.
    pub distance: f64,
    /// Base-model forward evaluations consumed.
    pub queries: usize,
    /// Steps where the gradient vanished and a random direction was used.
    pub zero_gradient_steps: usize,
}

/// Loss, input gradient, and query cost of one gradient evaluation.
pub struct GradEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub queries: usize,
}

/// A classifier under attack: differentiable loss surface plus the hard
/// decision rule that adjudicates success.
pub trait DecisionTarget: Sync {
    fn num_labels(&self) -> usize;
    fn input_length(&self) -> usize;
    /// Cross-entropy loss and its gradient w.r.t. the input. `step`
    /// seeds any EOT noise so attacks are reproducible.
    fn loss_gradient(&self, x: &[f64], label: usize, step: u64) -> Result<GradEval, AttackError>;
    /// Hard decision of the deployed rule.
    fn decide(&self, x: &[f64]) -> Result<(usize, usize), AttackError>;
}

/// Undefended base classifier: plain argmax of the logits.
pub struct BenignTarget<'a> {
    params: &'a ModelParams,
}

impl<'a> BenignTarget<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        BenignTarget { params }
    }
}

impl DecisionTarget for BenignTarget<'_> {
    fn num_labels(&self) -> usize {
        self.params.num_labels()
    }

    fn input_length(&self) -> usize {
        self.params.input_length()
    }

    fn loss_gradient(&self, x: &[f64], label: usize, _step: u64) -> Result<GradEval, AttackError> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (loss, _, dinput) = nnkit::loss_and_gradients(self.params, batch, &[label])?;
        Ok(GradEval { loss, grad: dinput.row(0).to_vec(), queries: 1 })
    }

    fn decide(&self, x: &[f64]) -> Result<(usize, usize), AttackError> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let logits = nnkit::forward(self.params, batch)?;
        Ok((argmax_row(logits.row(0).to_slice().expect("contiguous")), 1))
    }
}

/// Smoothed classifier under EOT: gradients average over noise draws with
/// the draw shared across masks/members; decisions are majority votes.
pub struct SmoothedTarget<'a> {
    model: &'a SmoothedModel,
    sigma: f64,
    eot_draws: usize,
    n_eval: usize,
    seed: u64,
}

impl<'a> SmoothedTarget<'a> {
    pub fn new(
        model: &'a SmoothedModel,
        sigma: f64,
        eot_draws: usize,
        n_eval: usize,
        seed: u64,
    ) -> Self {
        SmoothedTarget { model, sigma, eot_draws, n_eval, seed }
    }

    /// Noisy copies of `x`, one per EOT draw, seeded by the step index.
    fn noisy_draws(&self, x: &[f64], step: u64) -> Array2<f64> {
        let t = x.len();
        let mut noisy = Array2::zeros((self.eot_draws, t));
        for d in 0..self.eot_draws {
            let mut rng =
                seeds::rng_from(seeds::derive3(self.seed, STREAM_EOT, step, d as u64));
            let mut row = noisy.row_mut(d);
            for (dst, &s) in row.iter_mut().zip(x) {
                let z: f64 = rng.sample(StandardNormal);
                *dst = s + self.sigma * z;
            }
        }
        noisy
    }
}

/// Mean cross-entropy of per-draw mean logits against one label, plus the
/// per-draw dlogits scaled for each of `m` members.
fn eot_dlogits(
    mean_logits: &Array2<f64>,
    label: usize,
    members: usize,
) -> Result<(f64, Array2<f64>), AttackError> {
    let draws = mean_logits.dim().0;
    let labels = vec![label; draws];
    let loss = nnkit::cross_entropy(mean_logits, &labels)?;
    let mut dl = nnkit::softmax(mean_logits);
    for mut row in dl.rows_mut() {
        row[label] -= 1.0;
    }
    dl.mapv_inplace(|v| v / (draws as f64 * members as f64));
    Ok((loss, dl))
}

impl DecisionTarget for SmoothedTarget<'_> {
    fn num_labels(&self) -> usize {
        self.model.num_labels()
    }

    fn input_length(&self) -> usize {
        self.model.input_length()
    }

    fn loss_gradient(&self, x: &[f64], label: usize, step: u64) -> Result<GradEval, AttackError> {
        let t = x.len();
        let draws = self.eot_draws;
        let noisy = self.noisy_draws(x, step);
        match self.model {
            SmoothedModel::Single(params) | SmoothedModel::SelfEnsemble(params, _) => {
                let mask_set = self.model.masks();
                let m = mask_set.map_or(1, |s| s.len());
                // Rows grouped by draw: (d, i) -> mask i applied to draw d.
                let mut batch = Array2::zeros((draws * m, t));
                for d in 0..draws {
                    let noisy_row = noisy.row(d);
                    let src = noisy_row.to_slice().expect("contiguous");
                    for i in 0..m {
                        let mut dst_row = batch.row_mut(d * m + i);
                        let dst = dst_row.as_slice_mut().expect("contiguous");
                        match mask_set {
                            Some(set) => set.masks()[i].apply_to(src, dst),
                            None => dst.copy_from_slice(src),
                        }
                    }
                }
                let pass = nnkit::forward_cached(params, batch.view())?;
                let mut mean_logits = Array2::zeros((draws, self.model.num_labels()));
                for d in 0..draws {
                    for i in 0..m {
                        let row = pass.logits.row(d * m + i);
                        mean_logits.row_mut(d).zip_mut_with(&row, |a, &b| *a += b / m as f64);
                    }
                }
                let (loss, dl) = eot_dlogits(&mean_logits, label, m)?;
                let mut dlogits = Array2::zeros((draws * m, self.model.num_labels()));
                for d in 0..draws {
                    for i in 0..m {
                        dlogits.row_mut(d * m + i).assign(&dl.row(d));
                    }
                }
                let (_, dinput) = nnkit::backward(params, &pass, &dlogits);
                let mut grad = vec![0.0; t];
                for d in 0..draws {
                    for i in 0..m {
                        let row = dinput.row(d * m + i);
                        let row = row.to_slice().expect("contiguous");
                        match mask_set {
                            Some(set) => {
                                for ((g, &v), &b) in
                                    grad.iter_mut().zip(row).zip(set.masks()[i].bits())
                                {
                                    if b != 0 {
                                        *g += v;
                                    }
                                }
                            }
                            None => {
                                for (g, &v) in grad.iter_mut().zip(row) {
                                    *g += v;
                                }
                            }
                        }
                    }
                }
                Ok(GradEval { loss, grad, queries: draws * m })
            }
            SmoothedModel::DeepEnsemble(members) => {
                let m = members.len();
                let passes: Vec<_> = members
                    .iter()
                    .map(|p| nnkit::forward_cached(p, noisy.view()))
                    .collect::<Result<_, _>>()?;
                let mut mean_logits = Array2::zeros((draws, self.model.num_labels()));
                for pass in &passes {
                    mean_logits.zip_mut_with(&pass.logits, |a, &b| *a += b / m as f64);
                }
                let (loss, dl) = eot_dlogits(&mean_logits, label, m)?;
                let mut grad = vec![0.0; t];
                for (params, pass) in members.iter().zip(&passes) {
                    let (_, dinput) = nnkit::backward(params, pass, &dl);
                    for row in dinput.rows() {
                        for (g, &v) in grad.iter_mut().zip(row.to_slice().expect("contiguous")) {
                            *g += v;
                        }
                    }
                }
                Ok(GradEval { loss, grad, queries: draws * m })
            }
        }
    }

    fn decide(&self, x: &[f64]) -> Result<(usize, usize), AttackError> {
        let counts = smoothing::collect_votes(
            self.model,
            x,
            self.sigma,
            self.n_eval,
            seeds::derive(self.seed, STREAM_DECIDE),
        )?;
        Ok((counts.top(), self.n_eval * self.model.arity()))
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// PGD-ℓ2: `steps` normalized-gradient ascent steps on the target's loss,
/// each projected back onto the ε-ball around the clean input.
pub fn pgd_l2(
    target: &dyn DecisionTarget,
    x: &[f64],
    true_label: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    if x.len() != target.input_length() {
        return Err(AttackError::LengthMismatch { expected: target.input_length(), got: x.len() });
    }
    if true_label >= target.num_labels() {
        return Err(AttackError::BadLabel { label: true_label, num_labels: target.num_labels() });
    }

    let mut queries = 0usize;
    let mut zero_gradient_steps = 0usize;
    let mut current = x.to_vec();

    if cfg.epsilon > 0.0 {
        for step in 0..cfg.steps {
            let eval = target.loss_gradient(&current, true_label, step as u64)?;
            queries += eval.queries;
            if eval.grad.iter().any(|g| !g.is_finite()) {
                return Err(AttackError::NonFiniteGradient { step });
            }
            let norm = l2_norm(&eval.grad);
            let direction: Vec<f64> = if norm <= 1e-12 {
                zero_gradient_steps += 1;
                let mut rng = seeds::rng_from(seeds::derive3(
                    cfg.seed,
                    STREAM_FALLBACK,
                    step as u64,
                    0,
                ));
                let raw: Vec<f64> = (0..current.len())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let rnorm = l2_norm(&raw).max(1e-300);
                raw.iter().map(|v| v / rnorm).collect()
            } else {
                eval.grad.iter().map(|g| g / norm).collect()
            };
            // Ascend the loss, then project onto the ε-ball around x.
            for (c, d) in current.iter_mut().zip(&direction) {
                *c += cfg.step_size * d;
            }
            let mut delta: Vec<f64> = current.iter().zip(x).map(|(c, o)| c - o).collect();
            let dnorm = l2_norm(&delta);
            if dnorm > cfg.epsilon {
                let scale = cfg.epsilon / dnorm;
                for d in delta.iter_mut() {
                    *d *= scale;
                }
            }
            for ((c, o), d) in current.iter_mut().zip(x).zip(&delta) {
                *c = o + d;
            }
        }
    }

    let (decided, q) = target.decide(&current)?;
    queries += q;
    let distance = l2_norm(&current.iter().zip(x).map(|(c, o)| c - o).collect::<Vec<_>>());
    Ok(AttackResult {
        adversarial: current,
        success: decided != true_label,
        distance,
        queries,
        zero_gradient_steps,
    })
}

/// One row of the attack-success-rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrRow {
    pub setup: String,
    pub epsilon: f64,
    pub asr: f64,
    pub n_samples: usize,
}

/// Attack every configured setup over a test subset at each ε; the
/// per-(setup, ε, sample) seeds make the sweep reproducible. Attacks use
/// the η = 2ε/steps schedule.
#[allow(clippy::too_many_arguments)]
pub fn attack_sweep(
    setups: &[(String, &dyn DecisionTarget)],
    dataset: &Dataset,
    epsilons: &[f64],
    steps: usize,
    eot_draws: usize,
    n_eval: usize,
    max_samples: usize,
    base_seed: u64,
) -> Result<Vec<AsrRow>, AttackError> {
    use rayon::prelude::*;
    if epsilons.is_empty() {
        return Err(AttackError::Config("epsilon list is empty".into()));
    }
    let take = dataset.len().min(max_samples);
    let mut rows = Vec::with_capacity(setups.len() * epsilons.len());
    for (setup_idx, (name, target)) in setups.iter().enumerate() {
        for &epsilon in epsilons {
            let successes: usize = (0..take)
                .into_par_iter()
                .map(|i| {
                    let s = &dataset.series[i];
                    let cfg = AttackConfig {
                        epsilon,
                        steps,
                        step_size: (2.0 * epsilon / steps.max(1) as f64).max(1e-12),
                        eot_draws,
                        n_eval,
                        seed: seeds::derive3(
                            base_seed,
                            setup_idx as u64,
                            epsilon.to_bits(),
                            i as u64,
                        ),
                    };
                    let result = pgd_l2(*target, &s.values, s.label, &cfg)?;
                    Ok(usize::from(result.success))
                })
                .collect::<Result<Vec<_>, AttackError>>()?
                .iter()
                .sum();
            rows.push(AsrRow {
                setup: name.clone(),
                epsilon,
                asr: successes as f64 / take as f64,
                n_samples: take,
            });
        }
    }
    Ok(rows)
}
