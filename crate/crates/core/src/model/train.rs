//! Local training: loss selection, hyper-parameters and the worker-side
//! mini-batch SGD loop.

use serde::{Deserialize, Serialize};

use super::{loss_and_grad, sgd_step_in_place, ModelParams};
use crate::error::{FedError, Result};
use crate::losses::TverskySpec;
use crate::seed::{derive, SplitMix64};
use crate::synthdata::{ImageSample, WorkerShard};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    CrossEntropy,
    Tversky(TverskySpec),
    /// `tversky + ce_weight * cross_entropy`.
    Composite { tversky: TverskySpec, ce_weight: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Tversky(TverskySpec::default())
    }
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::CrossEntropy => "cross_entropy",
            LossSpec::Tversky(_) => "tversky",
            LossSpec::Composite { .. } => "composite",
        }
    }

    pub fn tversky(&self) -> Option<&TverskySpec> {
        match self {
            LossSpec::CrossEntropy => None,
            LossSpec::Tversky(t) | LossSpec::Composite { tversky: t, .. } => Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Whole images per gradient step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossSpec,
    /// Weight of the proximal pull towards the incoming global model; 0 disables it.
    pub prox_mu: f64,
}

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 4;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_PROX_MU: f64 = 0.01;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            loss: LossSpec::default(),
            prox_mu: DEFAULT_PROX_MU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(FedError::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(FedError::invalid("batch_size must be at least 1"));
        }
        // learning_rate = 0 is accepted as a no-op schedule.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(FedError::invalid(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(FedError::invalid(format!("prox_mu {} must be finite and >= 0", self.prox_mu)));
        }
        match &self.loss {
            LossSpec::CrossEntropy => Ok(()),
            LossSpec::Tversky(t) => t.validate(),
            LossSpec::Composite { tversky, ce_weight } => {
                if !(*ce_weight >= 0.0 && ce_weight.is_finite()) {
                    return Err(FedError::invalid(format!("ce_weight {ce_weight} must be finite and >= 0")));
                }
                tversky.validate()
            }
        }
    }
}

/// Train a copy of `global` on `shard` for `cfg.epochs` epochs of
/// mini-batch SGD. Epoch `e` visits images in an order shuffled with
/// `derive(seed, e)`. With `prox_mu > 0` the incoming global is the anchor.
pub fn client_update(global: &ModelParams, shard: &WorkerShard, cfg: &TrainConfig, seed: u64) -> Result<ModelParams> {
    train_on(global, &shard.samples, cfg, seed)
}

/// Train on a pooled sample set with no proximal anchor; the same loop a
/// worker runs, used as the centralized reference.
pub fn train_centralized(params: &ModelParams, samples: &[ImageSample], cfg: &TrainConfig, seed: u64) -> Result<ModelParams> {
    let cfg = TrainConfig {
        prox_mu: 0.0,
        ..cfg.clone()
    };
    train_on(params, samples, &cfg, seed)
}

pub(crate) fn train_on(global: &ModelParams, samples: &[ImageSample], cfg: &TrainConfig, seed: u64) -> Result<ModelParams> {
    if samples.is_empty() {
        return Err(FedError::invalid("cannot train on an empty shard"));
    }
    cfg.validate()?;
    let anchor = (cfg.prox_mu > 0.0).then_some(global);
    let mut local = global.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        SplitMix64::new(derive(seed, epoch as u64)).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ImageSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (_, grad) = loss_and_grad(&local, &batch, cfg, anchor)?;
            sgd_step_in_place(&mut local, &grad, cfg.learning_rate)?;
        }
    }
    Ok(local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{data_loss, init_params};
    use crate::synthdata::{generate_dataset, generate_dataset_with, partition_iid, ClassProfile, SceneConfig};

    fn shard(n: usize, noise: f64) -> WorkerShard {
        let cfg = SceneConfig::new(8, 8, ClassProfile::default()).with_noise(noise);
        let data = generate_dataset_with(5, n, &cfg).unwrap();
        partition_iid(&data, 1, 0).unwrap().remove(0)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let g = init_params(1, 5, 5).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick()
        };
        assert_eq!(client_update(&g, &shard(3, 0.35), &cfg, 9).unwrap(), g);
    }

    #[test]
    fn one_sample_one_epoch_moves() {
        let g = init_params(1, 5, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..quick()
        };
        assert_ne!(client_update(&g, &shard(1, 0.35), &cfg, 9).unwrap(), g);
    }

    #[test]
    fn training_reduces_loss_on_clean_data() {
        let s = shard(6, 0.0);
        let g = init_params(2, 5, 5).unwrap();
        let cfg = quick();
        let before = data_loss(&g, &s.samples, &cfg.loss).unwrap();
        let after = data_loss(&client_update(&g, &s, &cfg, 4).unwrap(), &s.samples, &cfg.loss).unwrap();
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn deterministic_and_does_not_touch_global() {
        let s = shard(5, 0.35);
        let g = init_params(2, 5, 5).unwrap();
        let copy = g.clone();
        let a = client_update(&g, &s, &quick(), 4).unwrap();
        let b = client_update(&g, &s, &quick(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(g, copy);
    }

    #[test]
    fn strong_prox_stays_closer() {
        let s = shard(4, 0.35);
        let g = init_params(6, 5, 5).unwrap();
        let free = TrainConfig { prox_mu: 0.0, epochs: 2, ..TrainConfig::default() };
        let pulled = TrainConfig { prox_mu: 1e3, learning_rate: 1e-4, epochs: 2, ..TrainConfig::default() };
        let free = TrainConfig { learning_rate: 1e-4, ..free };
        let d_free = client_update(&g, &s, &free, 1).unwrap().squared_distance(&g);
        let d_pulled = client_update(&g, &s, &pulled, 1).unwrap().squared_distance(&g);
        assert!(d_pulled < d_free, "{d_pulled} >= {d_free}");
    }

    #[test]
    fn rejects_bad_configs() {
        let g = init_params(1, 5, 5).unwrap();
        let s = shard(1, 0.35);
        assert!(client_update(&g, &s, &TrainConfig { epochs: 0, ..quick() }, 0).is_err());
        assert!(client_update(&g, &s, &TrainConfig { learning_rate: -1.0, ..quick() }, 0).is_err());
        let empty = WorkerShard::new(0, vec![], vec![]);
        assert!(client_update(&g, &empty, &quick(), 0).is_err());
        let data = generate_dataset(1, 1, 8, 8, &ClassProfile::default()).unwrap();
        assert!(train_on(&g, &data, &quick(), 0).is_ok());
    }
}
