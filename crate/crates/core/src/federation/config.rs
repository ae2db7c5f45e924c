use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::TrainConfig;
use crate::synthdata::{ClassProfile, SceneConfig, CLASS_OIL, DEFAULT_NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedSgd,
    FedProx,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedSgd => "fedsgd",
            Algorithm::FedProx => "fedprox",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fedavg" => Some(Algorithm::FedAvg),
            "fedsgd" => Some(Algorithm::FedSgd),
            "fedprox" => Some(Algorithm::FedProx),
            _ => None,
        }
    }
}

/// How the weight test compares `theta` against `theta_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRule {
    /// `theta >= theta_min`
    AtLeast,
    /// `theta > theta_min`
    Above,
}

/// Aggregation weight of a worker: its pixel count or its image count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Pixels,
    Samples,
}

/// Parameters of the threshold controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub step: f64,
    pub low_band: f64,
    pub high_band: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            step: 0.01,
            low_band: 0.25,
            high_band: 0.50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Worker pool size `K`.
    pub n_workers: usize,
    /// Fraction `C` of the pool sampled each round.
    pub participation: f64,
    pub rounds: usize,
    pub algorithm: Algorithm,
    pub bal_enabled: bool,
    pub initial_threshold: f64,
    pub priority_class: usize,
    pub threshold: ThresholdRule,
    pub theta_min: f64,
    pub theta_rule: ThetaRule,
    pub weighting: Weighting,
    /// Local training. `train.prox_mu` is only applied under FedProx.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            n_workers: 6,
            participation: 1.0,
            rounds: 20,
            algorithm: Algorithm::FedAvg,
            bal_enabled: true,
            initial_threshold: 0.50,
            priority_class: CLASS_OIL,
            threshold: ThresholdRule::default(),
            theta_min: 1.0,
            theta_rule: ThetaRule::AtLeast,
            weighting: Weighting::Pixels,
            train: TrainConfig::default(),
            seed: 1,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return Err(FedError::invalid("n_workers must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(FedError::invalid(format!("participation {} outside (0, 1]", self.participation)));
        }
        if self.rounds == 0 {
            return Err(FedError::invalid("rounds must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.initial_threshold) {
            return Err(FedError::invalid(format!(
                "initial threshold {} outside [0, 1]",
                self.initial_threshold
            )));
        }
        let t = &self.threshold;
        if !(t.step.is_finite() && (0.0..=1.0).contains(&t.low_band) && (0.0..=1.0).contains(&t.high_band)) {
            return Err(FedError::invalid("threshold step must be finite and bands within [0, 1]"));
        }
        if !self.theta_min.is_finite() {
            return Err(FedError::invalid("theta_min must be finite"));
        }
        self.train.validate()
    }

    /// Local training config with the proximal term switched on only for FedProx.
    pub fn local_train_config(&self) -> TrainConfig {
        let mut train = self.train.clone();
        if self.algorithm != Algorithm::FedProx {
            train.prox_mu = 0.0;
        }
        train
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Partition {
    Iid,
    NonIid { classes_per_worker: usize },
    NonIidUnbalanced { min_classes: usize, max_classes: usize },
}

impl Partition {
    pub fn name(&self) -> &'static str {
        match self {
            Partition::Iid => "iid",
            Partition::NonIid { .. } => "noniid",
            Partition::NonIidUnbalanced { .. } => "noniid_unbalanced",
        }
    }
}

/// Dataset generation and partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    /// Size of the held-out auxiliary test set used for worker scoring.
    pub aux_samples: usize,
    pub partition: Partition,
    pub profile: ClassProfile,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 1,
            n_samples: 60,
            height: 16,
            width: 16,
            noise: DEFAULT_NOISE,
            aux_samples: 20,
            partition: Partition::NonIid { classes_per_worker: 2 },
            profile: ClassProfile::default(),
        }
    }
}

impl DataConfig {
    pub fn scene(&self) -> SceneConfig {
        SceneConfig::new(self.height, self.width, self.profile.clone()).with_noise(self.noise)
    }
}
