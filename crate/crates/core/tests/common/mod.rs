//! Helpers shared by the integration suites: random fixtures and
//! independent reference implementations.
#![allow(dead_code)]

use fedbal::federation::{DataConfig, FedConfig, Partition};
use fedbal::model::{client_update, data_loss, loss_and_grad, LossSpec, ModelParams, TrainConfig};
use fedbal::seed::{derive_path, stream, SplitMix64};
use fedbal::synthdata::{ImageSample, WorkerShard};

pub const N_CLASSES: usize = 5;

/// A `h x w` sample with random labels and Gaussian features.
pub fn random_sample(rng: &mut SplitMix64, h: usize, w: usize, n_classes: usize) -> ImageSample {
    let n = h * w;
    ImageSample {
        height: h,
        width: w,
        feature_dim: n_classes,
        labels: (0..n).map(|_| rng.below(n_classes as u64) as u8).collect(),
        features: (0..n * n_classes).map(|_| rng.normal()).collect(),
    }
}

pub fn random_params(rng: &mut SplitMix64, feature_dim: usize, n_classes: usize, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(feature_dim, n_classes);
    p.weights.iter_mut().for_each(|w| *w = scale * rng.normal());
    p
}

/// Loss computed from the public value functions only:
/// data loss plus `mu/2 * ||w - anchor||^2` when an anchor is given.
pub fn reference_loss(params: &ModelParams, batch: &[ImageSample], loss: &LossSpec, prox: Option<(f64, &ModelParams)>) -> f64 {
    let data = data_loss(params, batch, loss).unwrap();
    match prox {
        None => data,
        Some((mu, anchor)) => data + 0.5 * mu * params.squared_distance(anchor),
    }
}

/// Worst violation of `|a - n| <= max(rel * max(|a|, |n|), abs_floor)`
/// between the analytic gradient and central differences with step `h`.
/// Returns (max ratio of error to allowance, analytic loss, reference loss).
pub fn gradient_check(
    params: &ModelParams,
    batch: &[ImageSample],
    cfg: &TrainConfig,
    anchor: Option<&ModelParams>,
    h: f64,
    rel: f64,
    abs_floor: f64,
) -> (f64, f64, f64) {
    let prox = anchor.map(|a| (cfg.prox_mu, a));
    let (loss, grad) = loss_and_grad(params, batch, cfg, anchor).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..params.weights.len() {
        let mut plus = params.clone();
        plus.weights[j] += h;
        let mut minus = params.clone();
        minus.weights[j] -= h;
        let numeric = (reference_loss(&plus, batch, &cfg.loss, prox) - reference_loss(&minus, batch, &cfg.loss, prox)) / (2.0 * h);
        let allowance = (rel * grad[j].abs().max(numeric.abs())).max(abs_floor);
        worst = worst.max((grad[j] - numeric).abs() / allowance);
    }
    (worst, loss, reference_loss(params, batch, &cfg.loss, prox))
}

/// Per-class IoU from explicit pixel sets: `|P ∩ T| / |P ∪ T|`, `None` when
/// the union is empty.
pub fn brute_force_iou(pred: &[u8], truth: &[u8], n_classes: usize) -> Vec<Option<f64>> {
    use std::collections::BTreeSet;
    (0..n_classes as u8)
        .map(|c| {
            let p: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == c).collect();
            let t: BTreeSet<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
            let union = p.union(&t).count();
            (union > 0).then(|| p.intersection(&t).count() as f64 / union as f64)
        })
        .collect()
}

pub fn brute_force_miou(pred: &[u8], truth: &[u8], n_classes: usize) -> f64 {
    let ious: Vec<f64> = brute_force_iou(pred, truth, n_classes).into_iter().flatten().collect();
    ious.iter().sum::<f64>() / ious.len() as f64
}

/// Plain weighted mean `sum_m (n_m / N) w_m`, accumulated in input order.
pub fn reference_weighted_mean(models: &[(ModelParams, u64)]) -> ModelParams {
    let total: u64 = models.iter().map(|(_, n)| n).sum();
    let mut out = ModelParams::zeros(models[0].0.feature_dim, models[0].0.n_classes);
    for (j, w) in out.weights.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, n) in models {
            acc += (*n as f64 / total as f64) * m.weights[j];
        }
        *w = acc;
    }
    out
}

/// Baseline FedAvg driven directly from `client_update`, bypassing the
/// engine. Every worker participates every round. Returns the global model
/// after each round.
pub fn reference_fedavg(initial: &ModelParams, shards: &[WorkerShard], cfg: &FedConfig) -> Vec<ModelParams> {
    let train = TrainConfig {
        prox_mu: 0.0,
        ..cfg.train.clone()
    };
    let mut global = initial.clone();
    let mut out = Vec::new();
    for round in 1..=cfg.rounds {
        let locals: Vec<(ModelParams, u64)> = shards
            .iter()
            .map(|s| {
                let seed = derive_path(cfg.seed, &[stream::CLIENT, round as u64, s.worker_id as u64]);
                (client_update(&global, s, &train, seed).unwrap(), s.n_pixels)
            })
            .collect();
        global = reference_weighted_mean(&locals);
        out.push(global.clone());
    }
    out
}

/// A small but complete experiment for fast engine tests.
pub fn quick_configs(rounds: usize, epochs: usize) -> (FedConfig, DataConfig) {
    let mut fed = FedConfig {
        rounds,
        ..FedConfig::default()
    };
    fed.train.epochs = epochs;
    let data = DataConfig {
        n_samples: 24,
        aux_samples: 8,
        partition: Partition::NonIid { classes_per_worker: 2 },
        ..DataConfig::default()
    };
    (fed, data)
}
