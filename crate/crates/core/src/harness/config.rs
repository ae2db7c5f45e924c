//! JSON run configuration.
//!
//! Every key is optional; an empty object `{}` yields the default run.
//!
//! ```json
//! {
//!   "preset": null,
//!   "paper_mode": true,
//!   "seed": 1,
//!   "n_workers": 6,
//!   "participation": 1.0,
//!   "rounds": 20,
//!   "algorithm": "fedavg",
//!   "bal": true,
//!   "initial_threshold": 0.5,
//!   "priority_class": 1,
//!   "threshold_step": 0.01,
//!   "selection_low_band": 0.25,
//!   "selection_high_band": 0.5,
//!   "theta_min": 1.0,
//!   "theta_rule": "at_least",
//!   "weighting": "pixels",
//!   "checkpoints": false,
//!   "train": { "epochs": 50, "batch_size": 4, "learning_rate": 0.5, "prox_mu": 0.01 },
//!   "loss": { "kind": "tversky", "alpha": 0.7, "beta": 0.3, "epsilon": 1e-6, "ce_weight": 1.0 },
//!   "data": {
//!     "seed": 1, "n_samples": 60, "height": 16, "width": 16, "noise": 0.35,
//!     "aux_samples": 20, "partition": "noniid",
//!     "classes_per_worker": 2, "min_classes": 1, "max_classes": 3
//!   }
//! }
//! ```
//!
//! `data.seed` defaults to the top-level `seed`. A missing `loss.beta` is
//! `1 - alpha`; with `paper_mode` on, an explicit `beta` must satisfy
//! `alpha + beta = 1`.

use std::path::Path;

use serde::Deserialize;

use super::presets::Preset;
use crate::error::{FedError, Result};
use crate::federation::{Algorithm, DataConfig, FedConfig, Partition, ThetaRule, ThresholdRule, Weighting};
use crate::losses::{TverskySpec, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_EPSILON};
use crate::model::{LossSpec, TrainConfig};
use crate::synthdata::{ClassProfile, MIN_DIM};

pub const DEFAULT_CE_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub paper_mode: Option<bool>,
    pub seed: Option<u64>,
    pub n_workers: Option<usize>,
    pub participation: Option<f64>,
    pub rounds: Option<usize>,
    pub algorithm: Option<Algorithm>,
    pub bal: Option<bool>,
    pub initial_threshold: Option<f64>,
    pub priority_class: Option<usize>,
    pub threshold_step: Option<f64>,
    pub selection_low_band: Option<f64>,
    pub selection_high_band: Option<f64>,
    pub theta_min: Option<f64>,
    pub theta_rule: Option<ThetaRule>,
    pub weighting: Option<Weighting>,
    pub checkpoints: Option<bool>,
    pub train: TrainSection,
    pub loss: LossSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub prox_mu: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// `tversky`, `cross_entropy` or `composite`.
    pub kind: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub ce_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub seed: Option<u64>,
    pub n_samples: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub noise: Option<f64>,
    pub aux_samples: Option<usize>,
    /// `iid`, `noniid` or `noniid_unbalanced`.
    pub partition: Option<String>,
    pub classes_per_worker: Option<usize>,
    pub min_classes: Option<usize>,
    pub max_classes: Option<usize>,
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub fed: FedConfig,
    pub data: DataConfig,
    pub preset: Option<Preset>,
    pub paper_mode: bool,
    pub checkpoints: bool,
}

/// Read and resolve a config file.
pub fn parse_config(path: &Path) -> Result<ParsedConfig> {
    ConfigFile::load(path)?.resolve()
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FedError::io(path, e))?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        let parsed: ConfigFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let key = e.path().to_string();
            FedError::config(if key == "." { "<root>".to_string() } else { key }, e.into_inner().to_string())
        })?;
        de.end().map_err(|e| FedError::config("<root>", e.to_string()))?;
        Ok(parsed)
    }

    /// Fill defaults and validate, naming the offending key on failure.
    pub fn resolve(&self) -> Result<ParsedConfig> {
        let preset = match &self.preset {
            None => None,
            Some(name) => Some(
                Preset::parse(name).ok_or_else(|| FedError::config("preset", format!("unknown preset `{name}`")))?,
            ),
        };
        let paper_mode = self.paper_mode.unwrap_or(true);
        let seed = self.seed.unwrap_or(1);
        let defaults = FedConfig::default();

        let n_workers = self.n_workers.unwrap_or(defaults.n_workers);
        check(n_workers >= 1, "n_workers", "must be at least 1")?;
        let participation = self.participation.unwrap_or(defaults.participation);
        check(participation > 0.0 && participation <= 1.0, "participation", "must lie in (0, 1]")?;
        let rounds = self.rounds.unwrap_or(defaults.rounds);
        check(rounds >= 1, "rounds", "must be at least 1")?;
        let initial_threshold = self.initial_threshold.unwrap_or(defaults.initial_threshold);
        check((0.0..=1.0).contains(&initial_threshold), "initial_threshold", "must lie in [0, 1]")?;
        let rule = ThresholdRule {
            step: self.threshold_step.unwrap_or(defaults.threshold.step),
            low_band: self.selection_low_band.unwrap_or(defaults.threshold.low_band),
            high_band: self.selection_high_band.unwrap_or(defaults.threshold.high_band),
        };
        check(rule.step.is_finite(), "threshold_step", "must be finite")?;
        check((0.0..=1.0).contains(&rule.low_band), "selection_low_band", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&rule.high_band), "selection_high_band", "must lie in [0, 1]")?;
        let theta_min = self.theta_min.unwrap_or(defaults.theta_min);
        check(theta_min.is_finite(), "theta_min", "must be finite")?;

        let train = self.resolve_train(paper_mode)?;
        let data = self.resolve_data(seed)?;
        let n_classes = data.profile.n_classes();
        let priority_class = self.priority_class.unwrap_or(defaults.priority_class);
        check(
            priority_class < n_classes,
            "priority_class",
            &format!("must be below the class count {n_classes}"),
        )?;
        check(
            data.n_samples >= n_workers,
            "data.n_samples",
            &format!("must be at least n_workers ({n_workers})"),
        )?;

        let fed = FedConfig {
            n_workers,
            participation,
            rounds,
            algorithm: self.algorithm.unwrap_or(defaults.algorithm),
            bal_enabled: self.bal.unwrap_or(defaults.bal_enabled),
            initial_threshold,
            priority_class,
            threshold: rule,
            theta_min,
            theta_rule: self.theta_rule.unwrap_or(defaults.theta_rule),
            weighting: self.weighting.unwrap_or(defaults.weighting),
            train,
            seed,
        };
        fed.validate().map_err(|e| FedError::config("<root>", e.to_string()))?;
        Ok(ParsedConfig {
            fed,
            data,
            preset,
            paper_mode,
            checkpoints: self.checkpoints.unwrap_or(false),
        })
    }

    fn resolve_train(&self, paper_mode: bool) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let t = &self.train;
        let epochs = t.epochs.unwrap_or(d.epochs);
        check(epochs >= 1, "train.epochs", "must be at least 1")?;
        let batch_size = t.batch_size.unwrap_or(d.batch_size);
        check(batch_size >= 1, "train.batch_size", "must be at least 1")?;
        let learning_rate = t.learning_rate.unwrap_or(d.learning_rate);
        check(
            learning_rate >= 0.0 && learning_rate.is_finite(),
            "train.learning_rate",
            "must be finite and >= 0",
        )?;
        let prox_mu = t.prox_mu.unwrap_or(d.prox_mu);
        check(prox_mu >= 0.0 && prox_mu.is_finite(), "train.prox_mu", "must be finite and >= 0")?;
        Ok(TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            loss: self.resolve_loss(paper_mode)?,
            prox_mu,
        })
    }

    fn resolve_loss(&self, paper_mode: bool) -> Result<LossSpec> {
        let l = &self.loss;
        let alpha = l.alpha.unwrap_or(DEFAULT_ALPHA);
        check(alpha >= 0.0 && alpha.is_finite(), "loss.alpha", "must be finite and >= 0")?;
        let beta = match l.beta {
            None if l.alpha.is_none() => DEFAULT_BETA,
            None => 1.0 - alpha,
            Some(b) => {
                if paper_mode && (alpha + b - 1.0).abs() > 1e-12 {
                    return Err(FedError::config(
                        "loss.beta",
                        format!("alpha + beta must equal 1 in paper mode (alpha {alpha}, beta {b})"),
                    ));
                }
                b
            }
        };
        check(beta >= 0.0 && beta.is_finite(), "loss.beta", "must be finite and >= 0")?;
        let epsilon = l.epsilon.unwrap_or(DEFAULT_EPSILON);
        check(epsilon > 0.0 && epsilon.is_finite(), "loss.epsilon", "must be finite and > 0")?;
        let tversky = TverskySpec { alpha, beta, epsilon };
        match l.kind.as_deref().unwrap_or("tversky") {
            "tversky" => Ok(LossSpec::Tversky(tversky)),
            "cross_entropy" => Ok(LossSpec::CrossEntropy),
            "composite" => {
                let ce_weight = l.ce_weight.unwrap_or(DEFAULT_CE_WEIGHT);
                check(ce_weight >= 0.0 && ce_weight.is_finite(), "loss.ce_weight", "must be finite and >= 0")?;
                Ok(LossSpec::Composite { tversky, ce_weight })
            }
            other => Err(FedError::config("loss.kind", format!("unknown loss `{other}`"))),
        }
    }

    fn resolve_data(&self, seed: u64) -> Result<DataConfig> {
        let d = DataConfig::default();
        let s = &self.data;
        let n_samples = s.n_samples.unwrap_or(d.n_samples);
        check(n_samples >= 1, "data.n_samples", "must be at least 1")?;
        let height = s.height.unwrap_or(d.height);
        check(height >= MIN_DIM, "data.height", &format!("must be at least {MIN_DIM}"))?;
        let width = s.width.unwrap_or(d.width);
        check(width >= MIN_DIM, "data.width", &format!("must be at least {MIN_DIM}"))?;
        let noise = s.noise.unwrap_or(d.noise);
        check(noise >= 0.0 && noise.is_finite(), "data.noise", "must be finite and >= 0")?;
        let aux_samples = s.aux_samples.unwrap_or(d.aux_samples);
        check(aux_samples >= 1, "data.aux_samples", "must be at least 1")?;

        let profile = ClassProfile::default();
        let minority = profile.minority_classes().len();
        let in_range = |v: usize| (1..=minority).contains(&v);
        let partition = match s.partition.as_deref().unwrap_or("noniid") {
            "iid" => Partition::Iid,
            "noniid" => {
                let k = s.classes_per_worker.unwrap_or(2);
                check(in_range(k), "data.classes_per_worker", &format!("must lie in [1, {minority}]"))?;
                Partition::NonIid { classes_per_worker: k }
            }
            "noniid_unbalanced" => {
                let lo = s.min_classes.unwrap_or(1);
                let hi = s.max_classes.unwrap_or(3);
                check(in_range(lo), "data.min_classes", &format!("must lie in [1, {minority}]"))?;
                check(in_range(hi) && hi >= lo, "data.max_classes", "must lie in [min_classes, minority class count]")?;
                Partition::NonIidUnbalanced {
                    min_classes: lo,
                    max_classes: hi,
                }
            }
            other => return Err(FedError::config("data.partition", format!("unknown partition `{other}`"))),
        };
        Ok(DataConfig {
            seed: s.seed.unwrap_or(seed),
            n_samples,
            height,
            width,
            noise,
            aux_samples,
            partition,
            profile,
        })
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(FedError::config(key, message))
    }
}
