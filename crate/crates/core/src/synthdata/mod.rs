//! Synthetic segmentation scenes with a controllable class-imbalance profile.
//!
//! A scene is an `H x W` label grid plus a per-pixel feature vector. Labels
//! start as the background class; every other class then receives an exact
//! pixel budget whose expectation is `target_freq * H * W`, spent by stamping
//! rectangular and elliptical blobs onto background pixels. Features are the
//! one-hot encoding of the label plus Gaussian noise, so a linear per-pixel
//! classifier can learn the task but not perfectly.

mod io;
mod partition;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::seed::{derive, SplitMix64};

pub use io::{dataset_from_json, dataset_to_json, load_dataset, save_dataset, DatasetDocument};
pub use partition::{partition_iid, partition_noniid, partition_noniid_unbalanced};

pub const MIN_DIM: usize = 8;
pub const DEFAULT_NOISE: f64 = 0.35;

/// Pixel counts (millions) of the reference oil-spill SAR dataset:
/// sea surface, oil spill, look-alike, ship, land.
pub const REFERENCE_PIXEL_COUNTS: [f64; 5] = [797.7, 9.1, 50.4, 0.3, 45.7];
pub const REFERENCE_CLASS_NAMES: [&str; 5] = ["sea", "oil", "lookalike", "ship", "land"];

pub const CLASS_SEA: usize = 0;
pub const CLASS_OIL: usize = 1;
pub const CLASS_LOOKALIKE: usize = 2;
pub const CLASS_SHIP: usize = 3;
pub const CLASS_LAND: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub names: Vec<String>,
    pub target_freq: Vec<f64>,
}

impl ClassProfile {
    pub fn new(names: Vec<String>, target_freq: Vec<f64>) -> Result<Self> {
        let profile = ClassProfile { names, target_freq };
        profile.validate()?;
        Ok(profile)
    }

    /// Build a profile by normalising raw per-class counts.
    pub fn from_counts(names: &[&str], counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(FedError::invalid("class counts must have a positive sum"));
        }
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            counts.iter().map(|c| c / total).collect(),
        )
    }

    pub fn n_classes(&self) -> usize {
        self.target_freq.len()
    }

    /// Highest-frequency class; ties go to the lower index.
    pub fn background(&self) -> usize {
        let mut best = 0;
        for (c, &f) in self.target_freq.iter().enumerate() {
            if f > self.target_freq[best] {
                best = c;
            }
        }
        best
    }

    /// Non-background classes, most frequent first.
    pub fn minority_classes(&self) -> Vec<usize> {
        let bg = self.background();
        let mut classes: Vec<usize> = (0..self.n_classes()).filter(|&c| c != bg).collect();
        classes.sort_by(|&a, &b| {
            self.target_freq[b]
                .partial_cmp(&self.target_freq[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        classes
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.target_freq.len();
        if n < 2 {
            return Err(FedError::invalid("profile needs at least two classes"));
        }
        if self.names.len() != n {
            return Err(FedError::invalid(format!(
                "profile has {} names for {} classes",
                self.names.len(),
                n
            )));
        }
        if n > u8::MAX as usize + 1 {
            return Err(FedError::invalid("at most 256 classes are supported"));
        }
        if let Some(f) = self.target_freq.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(FedError::invalid(format!("class frequency {f} outside (0, 1]")));
        }
        let sum: f64 = self.target_freq.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FedError::invalid(format!("class frequencies sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for ClassProfile {
    /// The five-class oil-spill profile.
    fn default() -> Self {
        ClassProfile::from_counts(&REFERENCE_CLASS_NAMES, &REFERENCE_PIXEL_COUNTS)
            .expect("reference profile is valid")
    }
}

/// One synthetic scene. `labels` is row-major `H x W`; `features` is
/// row-major `H x W x feature_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub labels: Vec<u8>,
    pub features: Vec<f64>,
}

impl ImageSample {
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel_features(&self, pixel: usize) -> &[f64] {
        &self.features[pixel * self.feature_dim..(pixel + 1) * self.feature_dim]
    }

    pub fn classes_present(&self) -> BTreeSet<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Checks shape consistency, label range and finiteness.
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let n = self.n_pixels();
        if self.labels.len() != n || self.features.len() != n * self.feature_dim {
            return Err(FedError::invalid(format!(
                "sample arrays do not match {}x{}x{}",
                self.height, self.width, self.feature_dim
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(FedError::invalid(format!("label {l} >= n_classes {n_classes}")));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(FedError::invalid("non-finite feature value"));
        }
        Ok(())
    }

    /// Relabel `pixel` as `class`, keeping its noise: the one-hot part of the
    /// feature vector moves from the old label to the new one.
    pub(crate) fn relabel_pixel(&mut self, pixel: usize, class: usize) {
        let old = self.labels[pixel] as usize;
        if old == class {
            return;
        }
        let base = pixel * self.feature_dim;
        if old < self.feature_dim {
            self.features[base + old] -= 1.0;
        }
        if class < self.feature_dim {
            self.features[base + class] += 1.0;
        }
        self.labels[pixel] = class as u8;
    }
}

/// A worker's local training set.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerShard {
    pub worker_id: usize,
    /// Index of each sample in the dataset it was partitioned from.
    pub sample_ids: Vec<usize>,
    pub samples: Vec<ImageSample>,
    pub class_inventory: BTreeSet<usize>,
    pub n_pixels: u64,
}

impl WorkerShard {
    /// Builds a shard, deriving the class inventory and pixel count from the samples.
    pub fn new(worker_id: usize, sample_ids: Vec<usize>, samples: Vec<ImageSample>) -> Self {
        let class_inventory = samples.iter().flat_map(|s| s.classes_present()).collect();
        let n_pixels = samples.iter().map(|s| s.n_pixels() as u64).sum();
        WorkerShard {
            worker_id,
            sample_ids,
            samples,
            class_inventory,
            n_pixels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// Generation knobs shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the additive Gaussian feature noise.
    pub noise: f64,
    pub profile: ClassProfile,
}

impl SceneConfig {
    pub fn new(height: usize, width: usize, profile: ClassProfile) -> Self {
        SceneConfig {
            height,
            width,
            noise: DEFAULT_NOISE,
            profile,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.height < MIN_DIM || self.width < MIN_DIM {
            return Err(FedError::invalid(format!(
                "scene {}x{} is below the {MIN_DIM}x{MIN_DIM} minimum",
                self.height, self.width
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(FedError::invalid(format!("noise {} must be finite and >= 0", self.noise)));
        }
        self.profile.validate()
    }
}

/// One scene with the default noise amplitude.
pub fn generate_sample(seed: u64, height: usize, width: usize, profile: &ClassProfile) -> Result<ImageSample> {
    generate_scene(seed, &SceneConfig::new(height, width, profile.clone()))
}

/// One scene. Identical `(seed, cfg)` gives bit-identical output.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<ImageSample> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    let (h, w) = (cfg.height, cfg.width);
    let n_classes = cfg.profile.n_classes();
    let bg = cfg.profile.background();
    let mut labels = vec![bg as u8; h * w];

    for class in cfg.profile.minority_classes() {
        let expected = cfg.profile.target_freq[class] * (h * w) as f64;
        let mut budget = expected.floor() as usize;
        if rng.bernoulli(expected - expected.floor()) {
            budget += 1;
        }
        stamp_class(&mut rng, &mut labels, h, w, bg as u8, class as u8, budget);
    }

    let mut features = Vec::with_capacity(h * w * n_classes);
    for &label in &labels {
        for f in 0..n_classes {
            let hot = if f == label as usize { 1.0 } else { 0.0 };
            features.push(hot + cfg.noise * rng.normal());
        }
    }

    Ok(ImageSample {
        height: h,
        width: w,
        feature_dim: n_classes,
        labels,
        features,
    })
}

const MAX_BLOBS_PER_CLASS: usize = 32;

/// Paint exactly `budget` background pixels with `class`, blob by blob.
/// Blobs only claim background pixels, so class budgets never compete.
fn stamp_class(rng: &mut SplitMix64, labels: &mut [u8], h: usize, w: usize, bg: u8, class: u8, budget: usize) {
    let mut placed = 0;
    for _ in 0..MAX_BLOBS_PER_CLASS {
        if placed >= budget {
            return;
        }
        let remaining = budget - placed;
        let max_radius = ((remaining as f64).sqrt() / 2.0).ceil().max(1.0) as usize;
        let ellipse = rng.bernoulli(0.5);
        let ry = rng.range_inclusive(0, max_radius);
        let rx = rng.range_inclusive(0, max_radius);
        let cy = rng.below(h as u64) as usize;
        let cx = rng.below(w as u64) as usize;
        let (y0, y1) = (cy.saturating_sub(ry), (cy + ry).min(h - 1));
        let (x0, x1) = (cx.saturating_sub(rx), (cx + rx).min(w - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if placed >= budget {
                    return;
                }
                if ellipse {
                    let dy = (y as f64 - cy as f64) / (ry as f64 + 0.5);
                    let dx = (x as f64 - cx as f64) / (rx as f64 + 0.5);
                    if dx * dx + dy * dy > 1.0 {
                        continue;
                    }
                }
                let idx = y * w + x;
                if labels[idx] == bg {
                    labels[idx] = class;
                    placed += 1;
                }
            }
        }
    }
    // Crowded grid: spend what is left scanning from a random start.
    let start = rng.below((h * w) as u64) as usize;
    for k in 0..h * w {
        if placed >= budget {
            return;
        }
        let idx = (start + k) % (h * w);
        if labels[idx] == bg {
            labels[idx] = class;
            placed += 1;
        }
    }
}

/// `n_samples` scenes; sample `i` uses seed `derive(seed, i)`.
pub fn generate_dataset(seed: u64, n_samples: usize, height: usize, width: usize, profile: &ClassProfile) -> Result<Vec<ImageSample>> {
    generate_dataset_with(seed, n_samples, &SceneConfig::new(height, width, profile.clone()))
}

pub fn generate_dataset_with(seed: u64, n_samples: usize, cfg: &SceneConfig) -> Result<Vec<ImageSample>> {
    if n_samples == 0 {
        return Err(FedError::invalid("n_samples must be at least 1"));
    }
    (0..n_samples)
        .map(|i| generate_scene(derive(seed, i as u64), cfg))
        .collect()
}

/// Pixel count per class over a set of samples.
pub fn label_histogram(samples: &[ImageSample], n_classes: usize) -> Vec<u64> {
    let mut hist = vec![0u64; n_classes];
    for s in samples {
        for &l in &s.labels {
            hist[l as usize] += 1;
        }
    }
    hist
}
