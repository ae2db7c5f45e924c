//! Per-pixel linear softmax classifier.
//!
//! Parameters are one flat vector: the `C x F` weight matrix in row-major
//! order (row `c` maps features to the logit of class `c`) followed by `C`
//! biases. Gradients are analytic; the loss modules hand back
//! `d loss / d p` and this module pushes it through the softmax.

mod train;

use std::borrow::Borrow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::losses::{self, argmax, ProbMap};
use crate::seed::SplitMix64;
use crate::synthdata::ImageSample;

pub use train::{client_update, train_centralized, LossSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(feature_dim: usize, n_classes: usize) -> Self {
        ModelParams {
            feature_dim,
            n_classes,
            weights: vec![0.0; Self::expected_len(feature_dim, n_classes)],
        }
    }

    pub fn expected_len(feature_dim: usize, n_classes: usize) -> usize {
        feature_dim * n_classes + n_classes
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Offset of the bias block.
    #[inline]
    pub fn bias_offset(&self) -> usize {
        self.feature_dim * self.n_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.n_classes < 2 {
            return Err(FedError::invalid(format!(
                "model needs feature_dim >= 1 and n_classes >= 2 (got {}, {})",
                self.feature_dim, self.n_classes
            )));
        }
        if self.weights.len() != Self::expected_len(self.feature_dim, self.n_classes) {
            return Err(FedError::invalid(format!(
                "weight vector has {} entries, expected {}",
                self.weights.len(),
                Self::expected_len(self.feature_dim, self.n_classes)
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(FedError::Numeric("model has non-finite weights".into()));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.feature_dim == other.feature_dim && self.n_classes == other.n_classes && self.len() == other.len()
    }

    pub fn squared_distance(&self, other: &ModelParams) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Checkpoint document `{feature_dim, n_classes, weights}`; floats use the
    /// shortest decimal that round-trips.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| FedError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Weights uniform in `[-1/sqrt(F), 1/sqrt(F)]`, biases zero.
pub fn init_params(seed: u64, feature_dim: usize, n_classes: usize) -> Result<ModelParams> {
    if feature_dim == 0 || n_classes < 2 {
        return Err(FedError::invalid(format!(
            "model needs feature_dim >= 1 and n_classes >= 2 (got {feature_dim}, {n_classes})"
        )));
    }
    let scale = 1.0 / (feature_dim as f64).sqrt();
    let mut rng = SplitMix64::new(seed);
    let mut params = ModelParams::zeros(feature_dim, n_classes);
    let bias = params.bias_offset();
    for w in &mut params.weights[..bias] {
        *w = (2.0 * rng.next_f64() - 1.0) * scale;
    }
    Ok(params)
}

fn check_sample(params: &ModelParams, sample: &ImageSample) -> Result<()> {
    if sample.feature_dim != params.feature_dim {
        return Err(FedError::invalid(format!(
            "sample has {} feature channels, model expects {}",
            sample.feature_dim, params.feature_dim
        )));
    }
    if sample.features.len() != sample.n_pixels() * sample.feature_dim || sample.labels.len() != sample.n_pixels() {
        return Err(FedError::invalid("sample arrays do not match its dimensions"));
    }
    Ok(())
}

/// Softmax probabilities of every pixel, appended to `out`.
fn softmax_into(params: &ModelParams, sample: &ImageSample, out: &mut Vec<f64>) {
    let (f_dim, c_dim) = (params.feature_dim, params.n_classes);
    let bias = &params.weights[params.bias_offset()..];
    let mut logits = vec![0.0; c_dim];
    for x in sample.features.chunks_exact(f_dim) {
        for (c, z) in logits.iter_mut().enumerate() {
            let row = &params.weights[c * f_dim..(c + 1) * f_dim];
            *z = bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &z in &logits {
            let e = (z - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= total;
        }
    }
}

pub fn forward(params: &ModelParams, sample: &ImageSample) -> Result<ProbMap> {
    check_sample(params, sample)?;
    let mut data = Vec::with_capacity(sample.n_pixels() * params.n_classes);
    softmax_into(params, sample, &mut data);
    Ok(ProbMap {
        height: sample.height,
        width: sample.width,
        n_classes: params.n_classes,
        data,
    })
}

/// Argmax labels; ties go to the lowest class index.
pub fn predict(params: &ModelParams, sample: &ImageSample) -> Result<Vec<u8>> {
    check_sample(params, sample)?;
    let (f_dim, c_dim) = (params.feature_dim, params.n_classes);
    let bias = &params.weights[params.bias_offset()..];
    let mut logits = vec![0.0; c_dim];
    Ok(sample
        .features
        .chunks_exact(f_dim)
        .map(|x| {
            for (c, z) in logits.iter_mut().enumerate() {
                let row = &params.weights[c * f_dim..(c + 1) * f_dim];
                *z = bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
            argmax(&logits) as u8
        })
        .collect())
}

/// Data loss over the pooled pixels of `batch`, without any proximal term.
pub fn data_loss<S: Borrow<ImageSample>>(params: &ModelParams, batch: &[S], loss: &LossSpec) -> Result<f64> {
    data_loss_and_grad(params, batch, loss, false).map(|(l, _)| l)
}

fn data_loss_and_grad<S: Borrow<ImageSample>>(
    params: &ModelParams,
    batch: &[S],
    loss: &LossSpec,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(FedError::invalid("empty batch"));
    }
    params.validate()?;
    let c_dim = params.n_classes;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for s in batch {
        let s = s.borrow();
        check_sample(params, s)?;
        softmax_into(params, s, &mut probs);
        labels.extend_from_slice(&s.labels);
    }

    let mut dprobs = want_grad.then(|| vec![0.0; probs.len()]);
    let value = match loss {
        LossSpec::CrossEntropy => losses::cross_entropy_with_grad(&probs, &labels, c_dim, dprobs.as_deref_mut())?,
        LossSpec::Tversky(spec) => losses::tversky_loss_with_grad(&probs, &labels, c_dim, spec, dprobs.as_deref_mut())?,
        LossSpec::Composite { tversky, ce_weight } => {
            let t = losses::tversky_loss_with_grad(&probs, &labels, c_dim, tversky, dprobs.as_deref_mut())?;
            let mut ce_grad = want_grad.then(|| vec![0.0; probs.len()]);
            let ce = losses::cross_entropy_with_grad(&probs, &labels, c_dim, ce_grad.as_deref_mut())?;
            if let (Some(g), Some(ce_g)) = (dprobs.as_mut(), ce_grad.as_ref()) {
                for (a, b) in g.iter_mut().zip(ce_g) {
                    *a += ce_weight * b;
                }
            }
            t + ce_weight * ce
        }
    };

    let Some(dprobs) = dprobs else {
        return Ok((value, Vec::new()));
    };

    // Softmax backprop: dz_c = p_c (g_c - sum_k p_k g_k).
    let f_dim = params.feature_dim;
    let bias = params.bias_offset();
    let mut grad = vec![0.0; params.len()];
    let mut pixel = 0;
    for s in batch {
        for x in s.borrow().features.chunks_exact(f_dim) {
            let p = &probs[pixel * c_dim..(pixel + 1) * c_dim];
            let g = &dprobs[pixel * c_dim..(pixel + 1) * c_dim];
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..c_dim {
                let dz = p[c] * (g[c] - dot);
                if dz != 0.0 {
                    for (gw, v) in grad[c * f_dim..(c + 1) * f_dim].iter_mut().zip(x) {
                        *gw += dz * v;
                    }
                    grad[bias + c] += dz;
                }
            }
            pixel += 1;
        }
    }
    Ok((value, grad))
}

/// Batch loss (plus `(mu/2)||w - anchor||^2` when `cfg.prox_mu > 0`) and its gradient.
pub fn loss_and_grad<S: Borrow<ImageSample>>(
    params: &ModelParams,
    batch: &[S],
    cfg: &TrainConfig,
    anchor: Option<&ModelParams>,
) -> Result<(f64, Vec<f64>)> {
    let (mut value, mut grad) = data_loss_and_grad(params, batch, &cfg.loss, true)?;
    if cfg.prox_mu > 0.0 {
        let anchor = anchor.ok_or_else(|| FedError::invalid("proximal term enabled but no anchor model given"))?;
        if !anchor.same_shape(params) {
            return Err(FedError::invalid("anchor model shape differs from trained model"));
        }
        value += 0.5 * cfg.prox_mu * params.squared_distance(anchor);
        for ((g, w), a) in grad.iter_mut().zip(&params.weights).zip(&anchor.weights) {
            *g += cfg.prox_mu * (w - a);
        }
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(FedError::Numeric(format!(
            "non-finite loss or gradient (loss = {value}, batch of {} samples, loss {:?})",
            batch.len(),
            cfg.loss
        )));
    }
    Ok((value, grad))
}

/// `w - learning_rate * grad`.
pub fn sgd_step(params: &ModelParams, grad: &[f64], learning_rate: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grad, learning_rate)?;
    Ok(next)
}

pub(crate) fn sgd_step_in_place(params: &mut ModelParams, grad: &[f64], learning_rate: f64) -> Result<()> {
    if grad.len() != params.len() {
        return Err(FedError::invalid(format!(
            "gradient has {} entries, model has {}",
            grad.len(),
            params.len()
        )));
    }
    for (w, g) in params.weights.iter_mut().zip(grad) {
        *w -= learning_rate * g;
    }
    Ok(())
}
