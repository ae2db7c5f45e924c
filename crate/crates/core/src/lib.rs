//! Deterministic federated-learning simulator for class-imbalanced
//! segmentation tasks.
//!
//! The crate is organised bottom-up:
//!
//! - [`synthdata`]: synthetic labelled scenes with a controllable class
//!   frequency profile, plus IID / non-IID worker partitioners.
//! - [`losses`]: Tversky index and loss family, cross-entropy.
//! - [`metrics`]: confusion counts, per-class IoU, mIoU and worker weight.
//! - [`model`]: per-pixel softmax classifier, analytic gradients, local SGD.
//! - [`federation`]: FedAvg / FedSGD / FedProx aggregation, relevant-worker
//!   selection, dynamic threshold control and the round loop.
//! - [`harness`]: JSON config, experiment presets, CSV / SVG output and CLI.
//!
//! Every random decision is drawn from [`seed::SplitMix64`] streams keyed by
//! explicit seeds, so a run is a pure function of its configuration.

pub mod error;
pub mod federation;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod par;
pub mod seed;
pub mod synthdata;

pub use error::{FedError, Result};
