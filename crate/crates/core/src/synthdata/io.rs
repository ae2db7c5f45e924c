//! Textual dataset dump: one JSON document per dataset.
//!
//! ```json
//! { "height": 16, "width": 16, "feature_dim": 5,
//!   "profile": { "names": [...], "target_freq": [...] },
//!   "samples": [ { "labels": [...H*W], "features": [...H*W*F] }, ... ] }
//! ```
//!
//! Arrays are row-major; features are grouped per pixel.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassProfile, ImageSample};
use crate::error::{FedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDocument {
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub profile: ClassProfile,
    pub samples: Vec<SampleArrays>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleArrays {
    pub labels: Vec<u8>,
    pub features: Vec<f64>,
}

pub fn dataset_to_json(samples: &[ImageSample], profile: &ClassProfile) -> Result<String> {
    let first = samples
        .first()
        .ok_or_else(|| FedError::invalid("cannot dump an empty dataset"))?;
    if samples
        .iter()
        .any(|s| (s.height, s.width, s.feature_dim) != (first.height, first.width, first.feature_dim))
    {
        return Err(FedError::invalid("dataset samples have mixed dimensions"));
    }
    let doc = DatasetDocument {
        height: first.height,
        width: first.width,
        feature_dim: first.feature_dim,
        profile: profile.clone(),
        samples: samples
            .iter()
            .map(|s| SampleArrays {
                labels: s.labels.clone(),
                features: s.features.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn dataset_from_json(text: &str) -> Result<(Vec<ImageSample>, ClassProfile)> {
    let doc: DatasetDocument = serde_json::from_str(text)?;
    doc.profile.validate()?;
    let samples = doc
        .samples
        .into_iter()
        .map(|a| {
            let s = ImageSample {
                height: doc.height,
                width: doc.width,
                feature_dim: doc.feature_dim,
                labels: a.labels,
                features: a.features,
            };
            s.validate(doc.profile.n_classes()).map(|_| s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, doc.profile))
}

pub fn save_dataset(path: &Path, samples: &[ImageSample], profile: &ClassProfile) -> Result<()> {
    let text = dataset_to_json(samples, profile)?;
    std::fs::write(path, text).map_err(|e| FedError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<(Vec<ImageSample>, ClassProfile)> {
    let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
    dataset_from_json(&text)
}
