//! The federated engine: participant sampling, relevant-worker selection,
//! the dynamic mIoU threshold, FedAvg / FedSGD / FedProx aggregation and the
//! round loop that ties them together.
//!
//! Within a round, local training and evaluation of the sampled workers run
//! in parallel (see [`crate::par`]); selection, threshold update and
//! aggregation are a sequential barrier that walks workers in ascending id
//! order, so results do not depend on scheduling.

mod aggregate;
mod config;
mod engine;
mod select;

pub use aggregate::{aggregate_fedavg, aggregate_fedsgd, fedavg_weights};
pub use config::{Algorithm, DataConfig, FedConfig, Partition, ThetaRule, ThresholdRule, Weighting};
pub use engine::{
    evaluate_model, evaluate_worker, prepare_experiment, run_experiment, run_experiment_with, run_federated_round,
    ExperimentOutcome, ExperimentSetup, GlobalState, RoundRecord, WorkerRoundStat,
};
pub use select::{
    dynamic_threshold, median, relevant_worker_selection, relevant_worker_selection_with, sample_participants,
    participant_count, Selection, ThresholdBranch,
};
