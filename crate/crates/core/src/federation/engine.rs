//! Round loop and experiment driver.

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_fedavg, aggregate_fedsgd};
use super::config::{Algorithm, DataConfig, FedConfig, Partition, Weighting};
use super::select::{dynamic_threshold_branch, relevant_worker_selection_with, sample_participants, Selection, ThresholdBranch};
use crate::error::{FedError, Result};
use crate::metrics::{confusion_counts, per_class_iou, ConfusionCounts, WorkerEval};
use crate::model::{client_update, data_loss, init_params, loss_and_grad, predict, sgd_step, ModelParams};
use crate::par::*;
use crate::seed::{derive, derive_path, stream};
use crate::synthdata::{
    generate_dataset_with, partition_iid, partition_noniid, partition_noniid_unbalanced, ImageSample, WorkerShard,
};

/// Per-worker outcome of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRoundStat {
    pub worker_id: usize,
    pub miou: f64,
    pub theta: f64,
    pub per_class_iou: Vec<Option<f64>>,
    /// Data loss of the worker's local model on its shard (FedSGD: at the global model).
    pub train_loss: f64,
    /// Aggregation weight (pixels or images).
    pub weight: u64,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub algorithm: Algorithm,
    pub bal_enabled: bool,
    pub selected: Vec<usize>,
    pub relevant: Vec<usize>,
    pub rejected: Vec<usize>,
    pub workers: Vec<WorkerRoundStat>,
    pub threshold_before: f64,
    pub threshold_after: f64,
    /// `None` when selection is off.
    pub threshold_branch: Option<ThresholdBranch>,
    /// False when no relevant worker existed and the global model was carried over.
    pub aggregated: bool,
    pub global_miou: f64,
    pub global_per_class_iou: Vec<Option<f64>>,
    /// Weighted mean of the participants' `train_loss`.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub params: ModelParams,
    pub threshold: f64,
    /// Number of completed rounds.
    pub round_index: usize,
    pub history: Vec<RoundRecord>,
}

impl GlobalState {
    pub fn new(params: ModelParams, cfg: &FedConfig) -> Self {
        GlobalState {
            params,
            threshold: cfg.initial_threshold,
            round_index: 0,
            history: Vec::new(),
        }
    }
}

/// Confusion counts of `params` over `samples`.
pub fn evaluate_model(params: &ModelParams, samples: &[ImageSample]) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::new(params.n_classes);
    for s in samples {
        counts.merge(&confusion_counts(&predict(params, s)?, &s.labels, params.n_classes)?)?;
    }
    Ok(counts)
}

/// Score a worker model on the auxiliary test set.
pub fn evaluate_worker(worker_id: usize, params: &ModelParams, aux_test: &[ImageSample], priority_class: usize) -> Result<WorkerEval> {
    if aux_test.is_empty() {
        return Err(FedError::invalid("auxiliary test set is empty"));
    }
    WorkerEval::from_counts(worker_id, &evaluate_model(params, aux_test)?, priority_class)
}

struct LocalOutcome {
    params: ModelParams,
    grad: Option<Vec<f64>>,
    train_loss: f64,
    eval: WorkerEval,
    weight: u64,
}

fn local_work(k: usize, state: &GlobalState, shard: &WorkerShard, aux_test: &[ImageSample], cfg: &FedConfig) -> Result<LocalOutcome> {
    let train = cfg.local_train_config();
    let seed = derive_path(cfg.seed, &[stream::CLIENT, state.round_index as u64 + 1, k as u64]);
    let (params, grad, train_loss) = match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx => {
            let local = client_update(&state.params, shard, &train, seed)?;
            let loss = data_loss(&local, &shard.samples, &train.loss)?;
            (local, None, loss)
        }
        // One full-shard gradient at the global model; the worker is scored
        // through the model it would reach after a single local step.
        Algorithm::FedSgd => {
            let (loss, grad) = loss_and_grad(&state.params, &shard.samples, &train, None)?;
            let stepped = sgd_step(&state.params, &grad, train.learning_rate)?;
            (stepped, Some(grad), loss)
        }
    };
    let eval = evaluate_worker(k, &params, aux_test, cfg.priority_class)?;
    let weight = match cfg.weighting {
        Weighting::Pixels => shard.n_pixels,
        Weighting::Samples => shard.len() as u64,
    };
    Ok(LocalOutcome {
        params,
        grad,
        train_loss,
        eval,
        weight,
    })
}

/// One federated round: sample, train locally, select, move the threshold,
/// aggregate, evaluate the new global model.
pub fn run_federated_round(state: GlobalState, shards: &[WorkerShard], aux_test: &[ImageSample], cfg: &FedConfig) -> Result<GlobalState> {
    cfg.validate()?;
    if shards.len() != cfg.n_workers {
        return Err(FedError::invalid(format!(
            "{} shards for {} workers",
            shards.len(),
            cfg.n_workers
        )));
    }
    if aux_test.is_empty() {
        return Err(FedError::invalid("auxiliary test set is empty"));
    }
    if let Some(s) = shards.iter().find(|s| s.is_empty()) {
        return Err(FedError::invalid(format!("worker {} has an empty shard", s.worker_id)));
    }
    let round = state.round_index + 1;
    let selected = sample_participants(cfg.n_workers, cfg.participation, cfg.seed, round);

    let outcomes: Vec<Result<LocalOutcome>> = selected
        .par_iter()
        .map(|&k| local_work(k, &state, &shards[k], aux_test, cfg))
        .collect();
    let outcomes: Vec<LocalOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    // Barrier: everything below is sequential in worker-id order.
    let evals: Vec<WorkerEval> = outcomes.iter().map(|o| o.eval.clone()).collect();
    let threshold_before = state.threshold;
    let (selection, threshold_after, branch) = if cfg.bal_enabled {
        let sel = relevant_worker_selection_with(&evals, threshold_before, cfg.theta_min, cfg.theta_rule);
        let (next, branch) = dynamic_threshold_branch(&sel, threshold_before, &cfg.threshold);
        (sel, next, Some(branch))
    } else {
        let sel = Selection {
            relevant: evals.clone(),
            rejected: Vec::new(),
        };
        (sel, threshold_before, None)
    };
    let relevant = selection.relevant_ids();
    let is_relevant = |k: usize| relevant.binary_search(&k).is_ok();

    let chosen: Vec<&LocalOutcome> = selected
        .iter()
        .zip(&outcomes)
        .filter(|(k, _)| is_relevant(**k))
        .map(|(_, o)| o)
        .collect();
    let (params, aggregated) = match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx => {
            let updates: Vec<(&ModelParams, u64)> = chosen.iter().map(|o| (&o.params, o.weight)).collect();
            match aggregate_fedavg(&updates)? {
                Some(p) => (p, true),
                None => (state.params.clone(), false),
            }
        }
        Algorithm::FedSgd => {
            let grads: Vec<(&[f64], u64)> = chosen
                .iter()
                .map(|o| (o.grad.as_deref().expect("fedsgd outcome has a gradient"), o.weight))
                .collect();
            let next = aggregate_fedsgd(&state.params, &grads, cfg.train.learning_rate)?;
            (next, !grads.is_empty())
        }
    };

    let global_counts = evaluate_model(&params, aux_test)?;
    let global_per_class_iou = per_class_iou(&global_counts);
    let global_miou = crate::metrics::mean_of_present(&global_per_class_iou).expect("aux set has labelled pixels");

    let total_weight: u64 = outcomes.iter().map(|o| o.weight).sum();
    let train_loss = outcomes
        .iter()
        .map(|o| o.train_loss * o.weight as f64 / total_weight as f64)
        .sum();

    let workers = outcomes
        .iter()
        .map(|o| WorkerRoundStat {
            worker_id: o.eval.worker_id,
            miou: o.eval.miou,
            theta: o.eval.theta,
            per_class_iou: o.eval.per_class_iou.clone(),
            train_loss: o.train_loss,
            weight: o.weight,
            relevant: is_relevant(o.eval.worker_id),
        })
        .collect();

    let record = RoundRecord {
        round,
        algorithm: cfg.algorithm,
        bal_enabled: cfg.bal_enabled,
        selected,
        relevant,
        rejected: selection.rejected_ids(),
        workers,
        threshold_before,
        threshold_after,
        threshold_branch: branch,
        aggregated,
        global_miou,
        global_per_class_iou,
        train_loss,
    };
    log::debug!(
        "round {round}: {} relevant / {} rejected, threshold {:.4} -> {:.4}, global mIoU {:.4}",
        record.relevant.len(),
        record.rejected.len(),
        threshold_before,
        threshold_after,
        global_miou
    );

    let mut history = state.history;
    history.push(record);
    Ok(GlobalState {
        params,
        threshold: threshold_after,
        round_index: round,
        history,
    })
}

/// Everything a run needs before its first round.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub dataset: Vec<ImageSample>,
    pub shards: Vec<WorkerShard>,
    pub aux_test: Vec<ImageSample>,
    pub initial: ModelParams,
}

/// Build the training set, worker shards, auxiliary test set (from a disjoint
/// seed stream) and the initial global model.
pub fn prepare_experiment(cfg: &FedConfig, data: &DataConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let scene = data.scene();
    let n_classes = data.profile.n_classes();
    if cfg.priority_class >= n_classes {
        return Err(FedError::invalid(format!(
            "priority class {} out of range for {n_classes} classes",
            cfg.priority_class
        )));
    }
    if data.aux_samples == 0 {
        return Err(FedError::invalid("aux_samples must be at least 1"));
    }
    let dataset = generate_dataset_with(derive(data.seed, stream::TRAIN_DATA), data.n_samples, &scene)?;
    let aux_test = generate_dataset_with(derive(data.seed, stream::AUX_DATA), data.aux_samples, &scene)?;
    let shards = match data.partition {
        Partition::Iid => partition_iid(&dataset, cfg.n_workers, data.seed)?,
        Partition::NonIid { classes_per_worker } => partition_noniid(&dataset, cfg.n_workers, classes_per_worker, data.seed)?,
        Partition::NonIidUnbalanced { min_classes, max_classes } => {
            partition_noniid_unbalanced(&dataset, cfg.n_workers, data.seed, min_classes, max_classes)?
        }
    };
    let initial = init_params(derive(cfg.seed, stream::INIT), n_classes, n_classes)?;
    Ok(ExperimentSetup {
        dataset,
        shards,
        aux_test,
        initial,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub history: Vec<RoundRecord>,
    pub final_params: ModelParams,
}

pub fn run_experiment(cfg: &FedConfig, data: &DataConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, data, |_| Ok(()))
}

/// Like [`run_experiment`], calling `observer` after every round.
pub fn run_experiment_with<F>(cfg: &FedConfig, data: &DataConfig, mut observer: F) -> Result<ExperimentOutcome>
where
    F: FnMut(&GlobalState) -> Result<()>,
{
    let setup = prepare_experiment(cfg, data)?;
    let mut state = GlobalState::new(setup.initial, cfg);
    for _ in 0..cfg.rounds {
        state = run_federated_round(state, &setup.shards, &setup.aux_test, cfg)?;
        observer(&state)?;
    }
    Ok(ExperimentOutcome {
        history: state.history,
        final_params: state.params,
    })
}
