//! Minimal differentiable 1D convolutional classifier.
//!
//! Architecture: a stack of same-padded conv blocks with ReLU, global
//! average pooling over time, and an affine head to `k` logits. Forward
//! and reverse-mode gradients are hand-written over `ndarray` with fixed
//! reduction order, so results are bit-reproducible for a given seed.
//!
//! Inference over shared read-only [`ModelParams`] is pure and safe to
//! run from any number of threads; training owns its params instance.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("checkpoint i/o: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

/// One conv block: `channels` output channels with an odd `kernel` width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
}

/// Base classifier configuration. Pooling is global-average and the head
/// is an affine map to `num_labels` logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_length: usize,
    pub num_labels: usize,
    pub blocks: Vec<ConvBlock>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_length == 0 {
            return Err(NnError::Config("input_length must be >= 1".into()));
        }
        if self.num_labels < 2 {
            return Err(NnError::Config(format!(
                "num_labels must be >= 2, got {}",
                self.num_labels
            )));
        }
        if self.blocks.is_empty() {
            return Err(NnError::Config("at least one conv block is required".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 {
                return Err(NnError::Config(format!("block {i}: channels must be >= 1")));
            }
            if b.kernel % 2 == 0 || b.kernel == 0 {
                return Err(NnError::Config(format!(
                    "block {i}: kernel width must be odd, got {}",
                    b.kernel
                )));
            }
            if b.kernel > self.input_length {
                return Err(NnError::Config(format!(
                    "block {i}: kernel width {} exceeds input length {}",
                    b.kernel, self.input_length
                )));
            }
        }
        Ok(())
    }
}

/// All weights and biases of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    conv_w: Vec<Array3<f64>>,
    conv_b: Vec<Array1<f64>>,
    head_w: Array2<f64>,
    head_b: Array1<f64>,
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn input_length(&self) -> usize {
        self.config.input_length
    }

    pub fn param_count(&self) -> usize {
        self.conv_w.iter().map(|w| w.len()).sum::<usize>()
            + self.conv_b.iter().map(|b| b.len()).sum::<usize>()
            + self.head_w.len()
            + self.head_b.len()
    }

    /// All-zero parameters: useful as the constant-output classifier.
    pub fn zeroed(config: &ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut c_in = 1usize;
        for block in &config.blocks {
            conv_w.push(Array3::zeros((block.channels, c_in, block.kernel)));
            conv_b.push(Array1::zeros(block.channels));
            c_in = block.channels;
        }
        Ok(ModelParams {
            config: config.clone(),
            conv_w,
            conv_b,
            head_w: Array2::zeros((config.num_labels, c_in)),
            head_b: Array1::zeros(config.num_labels),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.conv_w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.conv_b.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.head_w.iter().all(|v| v.is_finite())
            && self.head_b.iter().all(|v| v.is_finite())
    }

    /// Add `c` to every head bias (shifts every logit by exactly `c`).
    pub fn shift_head_bias(&mut self, c: f64) {
        self.head_b.mapv_inplace(|b| b + c);
    }
}

/// Initialize fan-in-scaled random weights and zero biases,
/// deterministically from `config.seed`.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams, NnError> {
    config.validate()?;
    let mut params = ModelParams::zeroed(config)?;
    for (i, w) in params.conv_w.iter_mut().enumerate() {
        let fan_in = (w.dim().1 * w.dim().2) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let mut rng = seeds::rng_from(seeds::derive2(config.seed, 1, i as u64));
        w.mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
    }
    {
        let fan_in = params.head_w.dim().1 as f64;
        let scale = (1.0 / fan_in).sqrt();
        let mut rng = seeds::rng_from(seeds::derive2(config.seed, 2, 0));
        params
            .head_w
            .mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(params)
}

/// Activations cached by [`forward_cached`] for the backward pass.
pub struct ForwardPass {
    /// Block inputs: `inputs[0]` is the (B, 1, T) input, then one entry
    /// per block output after ReLU.
    inputs: Vec<Array3<f64>>,
    /// Pre-activation of each block (for the ReLU gradient gate).
    pre_acts: Vec<Array3<f64>>,
    pooled: Array2<f64>,
    pub logits: Array2<f64>,
}

fn check_batch(params: &ModelParams, batch: &ArrayView2<f64>) -> Result<(), NnError> {
    if batch.dim().1 != params.config.input_length {
        return Err(NnError::Shape {
            expected: format!("batch rows of length {}", params.config.input_length),
            got: format!("length {}", batch.dim().1),
        });
    }
    Ok(())
}

/// Same-padded 1D convolution: x (B, C_in, T) * w (C_out, C_in, K) + b.
fn conv_forward(x: &Array3<f64>, w: &Array3<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (bsz, c_in, t) = x.dim();
    let (c_out, _, k) = w.dim();
    let pad = (k - 1) / 2;
    let mut out = Array3::zeros((bsz, c_out, t));
    for b in 0..bsz {
        for co in 0..c_out {
            let mut o_row = out.index_axis_mut(Axis(0), b);
            let o = o_row
                .index_axis_mut(Axis(0), co)
                .into_slice()
                .expect("contiguous");
            o.fill(bias[co]);
            for ci in 0..c_in {
                let x_row = x.index_axis(Axis(0), b);
                let xr = x_row.index_axis(Axis(0), ci).to_slice().expect("contiguous");
                for kk in 0..k {
                    let wv = w[[co, ci, kk]];
                    let shift = kk as isize - pad as isize;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = ((t as isize - shift).min(t as isize)) as usize;
                    let src = &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                    for (od, &xv) in o[t0..t1].iter_mut().zip(src) {
                        *od += wv * xv;
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the conv w.r.t. weights, bias, and input.
fn conv_backward(
    x: &Array3<f64>,
    w: &Array3<f64>,
    dout: &Array3<f64>,
) -> (Array3<f64>, Array1<f64>, Array3<f64>) {
    let (bsz, c_in, t) = x.dim();
    let (c_out, _, k) = w.dim();
    let pad = (k - 1) / 2;
    let mut dw = Array3::zeros((c_out, c_in, k));
    let mut db = Array1::zeros(c_out);
    let mut dx = Array3::zeros((bsz, c_in, t));
    for b in 0..bsz {
        let x_b = x.index_axis(Axis(0), b);
        let dout_b = dout.index_axis(Axis(0), b);
        let mut dx_b = dx.index_axis_mut(Axis(0), b);
        for co in 0..c_out {
            let dor = dout_b.index_axis(Axis(0), co);
            let dor = dor.to_slice().expect("contiguous");
            db[co] += dor.iter().sum::<f64>();
            for ci in 0..c_in {
                let xr = x_b.index_axis(Axis(0), ci);
                let xr = xr.to_slice().expect("contiguous");
                let mut dxr = dx_b.index_axis_mut(Axis(0), ci);
                let dxr = dxr.as_slice_mut().expect("contiguous");
                for kk in 0..k {
                    let shift = kk as isize - pad as isize;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = ((t as isize - shift).min(t as isize)) as usize;
                    let x_sub = &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                    let mut acc = 0.0;
                    for (&g, &xv) in dor[t0..t1].iter().zip(x_sub) {
                        acc += g * xv;
                    }
                    dw[[co, ci, kk]] += acc;
                    let wv = w[[co, ci, kk]];
                    let dx_sub =
                        &mut dxr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                    for (dd, &g) in dx_sub.iter_mut().zip(&dor[t0..t1]) {
                        *dd += wv * g;
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

/// Forward pass keeping the caches needed for [`backward`].
pub fn forward_cached(params: &ModelParams, batch: ArrayView2<f64>) -> Result<ForwardPass, NnError> {
    check_batch(params, &batch)?;
    let (bsz, t) = batch.dim();
    let x0 = batch
        .to_owned()
        .into_shape_with_order((bsz, 1, t))
        .expect("reshape");
    let mut inputs = vec![x0];
    let mut pre_acts = Vec::with_capacity(params.conv_w.len());
    for (w, b) in params.conv_w.iter().zip(&params.conv_b) {
        let pre = conv_forward(inputs.last().expect("nonempty"), w, b);
        let post = pre.mapv(|v| v.max(0.0));
        pre_acts.push(pre);
        inputs.push(post);
    }
    let last = inputs.last().expect("nonempty");
    let pooled = last.mean_axis(Axis(2)).expect("nonzero T");
    let logits = pooled.dot(&params.head_w.t()) + &params.head_b;
    Ok(ForwardPass { inputs, pre_acts, pooled, logits })
}

/// Logits for a batch of series (batch × k).
pub fn forward(params: &ModelParams, batch: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
    Ok(forward_cached(params, batch)?.logits)
}

/// Parameter gradients mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv_w: Vec<Array3<f64>>,
    pub conv_b: Vec<Array1<f64>>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

impl Gradients {
    fn zeroed_like(params: &ModelParams) -> Self {
        Gradients {
            conv_w: params.conv_w.iter().map(|w| Array3::zeros(w.dim())).collect(),
            conv_b: params.conv_b.iter().map(|b| Array1::zeros(b.len())).collect(),
            head_w: Array2::zeros(params.head_w.dim()),
            head_b: Array1::zeros(params.head_b.len()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.conv_w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.conv_b.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.head_w.iter().all(|v| v.is_finite())
            && self.head_b.iter().all(|v| v.is_finite())
    }
}

/// Reverse pass from `dlogits`: parameter gradients plus the gradient
/// w.r.t. the input batch (B, T).
pub fn backward(
    params: &ModelParams,
    pass: &ForwardPass,
    dlogits: &Array2<f64>,
) -> (Gradients, Array2<f64>) {
    let mut grads = Gradients::zeroed_like(params);
    grads.head_w = dlogits.t().dot(&pass.pooled);
    grads.head_b = dlogits.sum_axis(Axis(0));
    let dpooled = dlogits.dot(&params.head_w);

    let (bsz, c_last, t) = pass.inputs.last().expect("nonempty").dim();
    let inv_t = 1.0 / t as f64;
    let mut dpost = Array3::zeros((bsz, c_last, t));
    for b in 0..bsz {
        for c in 0..c_last {
            let g = dpooled[[b, c]] * inv_t;
            dpost
                .index_axis_mut(Axis(0), b)
                .index_axis_mut(Axis(0), c)
                .fill(g);
        }
    }

    for layer in (0..params.conv_w.len()).rev() {
        // ReLU gate on the pre-activation.
        let mut dpre = dpost;
        dpre.zip_mut_with(&pass.pre_acts[layer], |d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        let (dw, db, dx) = conv_backward(&pass.inputs[layer], &params.conv_w[layer], &dpre);
        grads.conv_w[layer] = dw;
        grads.conv_b[layer] = db;
        dpost = dx;
    }

    let dinput = dpost
        .into_shape_with_order((bsz, params.config.input_length))
        .expect("reshape");
    (grads, dinput)
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of a batch of logits against integer labels.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64, NnError> {
    let (bsz, k) = logits.dim();
    if labels.len() != bsz {
        return Err(NnError::Shape {
            expected: format!("{bsz} labels"),
            got: format!("{}", labels.len()),
        });
    }
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= k {
            return Err(NnError::LabelOutOfRange { label, num_labels: k });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / bsz as f64)
}

/// Mean cross-entropy, its parameter gradients, and the input gradient.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Gradients, Array2<f64>), NnError> {
    let pass = forward_cached(params, batch)?;
    let loss = cross_entropy(&pass.logits, labels)?;
    let bsz = pass.logits.dim().0;
    let mut dlogits = softmax(&pass.logits);
    for (i, &label) in labels.iter().enumerate() {
        dlogits[[i, label]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v / bsz as f64);
    let (grads, dinput) = backward(params, &pass, &dlogits);
    Ok((loss, grads, dinput))
}
