//! Training loop: SGD or Adam over a caller-provided stream of
//! (already augmented) batches.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, Gradients, ModelParams, NnError};

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Drives the per-epoch shuffling permutation in batch providers.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate < 0.0 || self.learning_rate.is_nan() {
            return Err(NnError::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Final parameters plus the per-epoch mean cross-entropy trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub loss_trace: Vec<f64>,
}

/// Parameter tensors in the fixed update order (per-layer weight then
/// bias, then head weight and bias). The order pins gradient
/// accumulation and optimizer updates for bit-reproducibility.
fn param_slices(params: &mut ModelParams) -> Vec<&mut [f64]> {
    let ModelParams { conv_w, conv_b, head_w, head_b, .. } = params;
    let mut out: Vec<&mut [f64]> = Vec::with_capacity(conv_w.len() * 2 + 2);
    for (w, b) in conv_w.iter_mut().zip(conv_b.iter_mut()) {
        out.push(w.as_slice_mut().expect("contiguous"));
        out.push(b.as_slice_mut().expect("contiguous"));
    }
    out.push(head_w.as_slice_mut().expect("contiguous"));
    out.push(head_b.as_slice_mut().expect("contiguous"));
    out
}

fn grad_slices(grads: &Gradients) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::with_capacity(grads.conv_w.len() * 2 + 2);
    for (w, b) in grads.conv_w.iter().zip(grads.conv_b.iter()) {
        out.push(w.as_slice().expect("contiguous"));
        out.push(b.as_slice().expect("contiguous"));
    }
    out.push(grads.head_w.as_slice().expect("contiguous"));
    out.push(grads.head_b.as_slice().expect("contiguous"));
    out
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    fn new(params: &mut ModelParams) -> Self {
        let sizes: Vec<usize> = param_slices(params).iter().map(|s| s.len()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

fn apply_update(
    params: &mut ModelParams,
    grads: &Gradients,
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in param_slices(params).into_iter().zip(grad_slices(grads)) {
                for (pv, &gv) in p.iter_mut().zip(g) {
                    *pv -= lr * gv;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            let state = adam.as_mut().expect("adam state");
            state.step += 1;
            let bc1 = 1.0 - beta1.powi(state.step as i32);
            let bc2 = 1.0 - beta2.powi(state.step as i32);
            for ((p, g), (m, v)) in param_slices(params)
                .into_iter()
                .zip(grad_slices(grads))
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                {
                    *mv = beta1 * *mv + (1.0 - beta1) * gv;
                    *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Train on a stream of batches: `epoch_batches(e)` yields the batches
/// for epoch `e` (augmentation included). Deterministic given the seeds
/// and batch order; a non-finite loss aborts with the offending epoch.
pub fn train<F>(
    params: ModelParams,
    cfg: &TrainConfig,
    mut epoch_batches: F,
) -> Result<TrainOutcome, NnError>
where
    F: FnMut(usize) -> Vec<(Array2<f64>, Vec<usize>)>,
{
    cfg.validate()?;
    let mut params = params;
    let mut adam = match cfg.optimizer {
        Optimizer::Adam { .. } => Some(AdamState::new(&mut params)),
        Optimizer::Sgd => None,
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(epoch);
        if batches.is_empty() {
            return Err(NnError::Config(format!("epoch {epoch} produced no batches")));
        }
        let mut epoch_loss = 0.0;
        for (batch, labels) in &batches {
            let (loss, grads, _) = loss_and_gradients(&params, batch.view(), labels)?;
            if !loss.is_finite() {
                return Err(NnError::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            apply_update(&mut params, &grads, cfg, &mut adam);
        }
        let mean = epoch_loss / batches.len() as f64;
        if !mean.is_finite() {
            return Err(NnError::Divergence { epoch, loss: mean });
        }
        trace.push(mean);
    }
    Ok(TrainOutcome { params, loss_trace: trace })
}
