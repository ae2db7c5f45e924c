//! Experiment presets and their summary tables.
//!
//! A preset expands a base configuration into named variants, runs each one
//! and condenses the histories into a table:
//!
//! | preset | variants | table |
//! |---|---|---|
//! | `alpha_sweep` | alpha in {0.6, 0.7, 0.8}, selection on | final / minimum training loss |
//! | `noniid` | 2 classes per worker, selection off / on | final mIoU and oil IoU |
//! | `noniid_unbalanced` | 1-3 classes per worker, every algorithm, selection off / on | final mIoU and oil IoU |
//! | `intensity_sweep` | 1, 2, 3 classes per worker, selection off / on | selection-minus-baseline differences |
//! | `central_vs_fed` | the base run plus pooled centralized training | minimum loss per source |

use std::fs;
use std::path::{Path, PathBuf};

use super::chart::{emit_chart_labelled, Series};
use super::config::ParsedConfig;
use super::results::{fmt_f64, write_results, Table};
use crate::error::{FedError, Result};
use crate::federation::{
    prepare_experiment, run_experiment_with, Algorithm, DataConfig, ExperimentOutcome, FedConfig, Partition, RoundRecord,
};
use crate::losses::TverskySpec;
use crate::model::{data_loss, train_centralized, LossSpec, ModelParams};
use crate::seed::{derive_path, stream};

pub const ALPHA_SWEEP: [f64; 3] = [0.6, 0.7, 0.8];
pub const INTENSITIES: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    AlphaSweep,
    NonIid,
    NonIidUnbalanced,
    IntensitySweep,
    CentralVsFed,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::AlphaSweep,
        Preset::NonIid,
        Preset::NonIidUnbalanced,
        Preset::IntensitySweep,
        Preset::CentralVsFed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::AlphaSweep => "alpha_sweep",
            Preset::NonIid => "noniid",
            Preset::NonIidUnbalanced => "noniid_unbalanced",
            Preset::IntensitySweep => "intensity_sweep",
            Preset::CentralVsFed => "central_vs_fed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// File name of the summary table written at the preset root.
    pub fn table_file(self) -> &'static str {
        match self {
            Preset::IntensitySweep => "differences.csv",
            Preset::CentralVsFed => "central_vs_fed.csv",
            _ => "summary.csv",
        }
    }

    /// Expand `base` into the preset's variants; each one is validated.
    pub fn variants(self, base: &ParsedConfig) -> Result<Vec<Variant>> {
        let fed = &base.fed;
        let data = &base.data;
        let bal_pair = |algorithm: Algorithm, data: &DataConfig, prefix: &str| -> Vec<Variant> {
            [false, true]
                .into_iter()
                .map(|bal| {
                    let suffix = if bal { "_bal" } else { "" };
                    Variant {
                        label: format!("{prefix}{}{suffix}", algorithm.name()),
                        fed: FedConfig {
                            algorithm,
                            bal_enabled: bal,
                            ..fed.clone()
                        },
                        data: data.clone(),
                    }
                })
                .collect()
        };
        let variants = match self {
            Preset::AlphaSweep => ALPHA_SWEEP
                .iter()
                .map(|&alpha| {
                    let mut f = fed.clone();
                    f.bal_enabled = true;
                    f.train.loss = with_alpha(&f.train.loss, alpha, base.paper_mode);
                    Variant {
                        label: format!("alpha_{alpha:.1}"),
                        fed: f,
                        data: data.clone(),
                    }
                })
                .collect(),
            Preset::NonIid => {
                let d = DataConfig {
                    partition: Partition::NonIid { classes_per_worker: 2 },
                    ..data.clone()
                };
                bal_pair(fed.algorithm, &d, "")
            }
            Preset::NonIidUnbalanced => {
                let d = DataConfig {
                    partition: Partition::NonIidUnbalanced {
                        min_classes: 1,
                        max_classes: 3,
                    },
                    ..data.clone()
                };
                [Algorithm::FedAvg, Algorithm::FedProx, Algorithm::FedSgd]
                    .into_iter()
                    .flat_map(|a| bal_pair(a, &d, ""))
                    .collect()
            }
            Preset::IntensitySweep => INTENSITIES
                .iter()
                .flat_map(|&k| {
                    let d = DataConfig {
                        partition: Partition::NonIid { classes_per_worker: k },
                        ..data.clone()
                    };
                    bal_pair(fed.algorithm, &d, &format!("classes_{k}_"))
                })
                .collect(),
            Preset::CentralVsFed => vec![Variant {
                label: "federated".to_string(),
                fed: fed.clone(),
                data: data.clone(),
            }],
        };
        for v in &variants {
            v.fed.validate()?;
        }
        Ok(variants)
    }
}

fn with_alpha(loss: &LossSpec, alpha: f64, paper_mode: bool) -> LossSpec {
    let old = loss.tversky().copied().unwrap_or_default();
    let tversky = TverskySpec {
        alpha,
        beta: if paper_mode { 1.0 - alpha } else { old.beta },
        epsilon: old.epsilon,
    };
    match loss {
        LossSpec::Composite { ce_weight, .. } => LossSpec::Composite {
            tversky,
            ce_weight: *ce_weight,
        },
        _ => LossSpec::Tversky(tversky),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub fed: FedConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub variant: Variant,
    pub outcome: ExperimentOutcome,
    /// Global model after every round; filled only when checkpoints are on.
    pub checkpoints: Vec<ModelParams>,
}

impl VariantRun {
    pub fn last(&self) -> &RoundRecord {
        self.outcome.history.last().expect("runs have at least one round")
    }

    pub fn final_miou(&self) -> f64 {
        self.last().global_miou
    }

    pub fn final_priority_iou(&self) -> Option<f64> {
        self.last()
            .global_per_class_iou
            .get(self.variant.fed.priority_class)
            .copied()
            .flatten()
    }

    pub fn final_train_loss(&self) -> f64 {
        self.last().train_loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub preset: Option<Preset>,
    pub runs: Vec<VariantRun>,
    pub table: Option<Table>,
}

pub fn run_variant(variant: Variant, keep_checkpoints: bool) -> Result<VariantRun> {
    log::info!("running {}", variant.label);
    let mut checkpoints = Vec::new();
    let outcome = run_experiment_with(&variant.fed, &variant.data, |state| {
        if keep_checkpoints {
            checkpoints.push(state.params.clone());
        }
        Ok(())
    })?;
    Ok(VariantRun {
        variant,
        outcome,
        checkpoints,
    })
}

/// Run a plain configuration (no preset) as a single variant.
pub fn run_single(cfg: &ParsedConfig) -> Result<PresetReport> {
    let variant = Variant {
        label: "run".to_string(),
        fed: cfg.fed.clone(),
        data: cfg.data.clone(),
    };
    Ok(PresetReport {
        preset: None,
        runs: vec![run_variant(variant, cfg.checkpoints)?],
        table: None,
    })
}

pub fn run_preset(preset: Preset, base: &ParsedConfig) -> Result<PresetReport> {
    // The centralized comparison needs the global model of every round.
    let keep = base.checkpoints || preset == Preset::CentralVsFed;
    let mut runs = preset
        .variants(base)?
        .into_iter()
        .map(|v| run_variant(v, keep))
        .collect::<Result<Vec<_>>>()?;
    let table = match preset {
        Preset::AlphaSweep => alpha_table(&runs),
        Preset::NonIid | Preset::NonIidUnbalanced => summary_table(&runs),
        Preset::IntensitySweep => difference_table(&runs),
        Preset::CentralVsFed => central_table(&runs[0])?,
    };
    if !base.checkpoints {
        runs.iter_mut().for_each(|r| r.checkpoints.clear());
    }
    Ok(PresetReport {
        preset: Some(preset),
        runs,
        table: Some(table),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn alpha_table(runs: &[VariantRun]) -> Table {
    let mut t = Table::new(&["alpha", "beta", "final_train_loss", "min_train_loss"]);
    for r in runs {
        let spec = r.variant.fed.train.loss.tversky().copied().unwrap_or_default();
        let min = r.outcome.history.iter().map(|h| h.train_loss).fold(f64::INFINITY, f64::min);
        t.push(vec![
            format!("{:.1}", spec.alpha),
            fmt_f64(spec.beta),
            fmt_f64(r.final_train_loss()),
            fmt_f64(min),
        ]);
    }
    t
}

fn summary_table(runs: &[VariantRun]) -> Table {
    let mut t = Table::new(&[
        "variant",
        "algorithm",
        "bal",
        "final_global_miou",
        "final_iou_oil",
        "best_global_miou",
    ]);
    for r in runs {
        let best = r.outcome.history.iter().map(|h| h.global_miou).fold(f64::NEG_INFINITY, f64::max);
        t.push(vec![
            r.variant.label.clone(),
            r.variant.fed.algorithm.name().to_string(),
            if r.variant.fed.bal_enabled { "on" } else { "off" }.to_string(),
            fmt_f64(r.final_miou()),
            opt(r.final_priority_iou()),
            fmt_f64(best),
        ]);
    }
    t
}

fn difference_table(runs: &[VariantRun]) -> Table {
    let mut t = Table::new(&[
        "classes_per_worker",
        "miou_baseline",
        "miou_bal",
        "miou_diff",
        "oil_baseline",
        "oil_bal",
        "oil_diff",
    ]);
    for pair in runs.chunks(2) {
        let (base, bal) = (&pair[0], &pair[1]);
        let k = match base.variant.data.partition {
            Partition::NonIid { classes_per_worker } => classes_per_worker,
            _ => 0,
        };
        let (ob, os) = (base.final_priority_iou(), bal.final_priority_iou());
        t.push(vec![
            k.to_string(),
            fmt_f64(base.final_miou()),
            fmt_f64(bal.final_miou()),
            fmt_f64(bal.final_miou() - base.final_miou()),
            opt(ob),
            opt(os),
            opt(ob.zip(os).map(|(b, s)| s - b)),
        ]);
    }
    t
}

/// Minimum training loss per data source: each worker's local loss, the
/// federated global model on the pooled data, and a model trained centrally
/// on the pooled data for `epochs` epochs per round.
fn central_table(fl: &VariantRun) -> Result<Table> {
    let fed = &fl.variant.fed;
    let setup = prepare_experiment(fed, &fl.variant.data)?;
    let train = fed.local_train_config();
    let loss = &train.loss;

    let mut t = Table::new(&["source", "min_loss", "round"]);
    let argmin = |losses: &mut dyn Iterator<Item = (usize, f64)>| {
        losses.fold((0, f64::INFINITY), |best, (r, l)| if l < best.1 { (r, l) } else { best })
    };
    for k in 0..fed.n_workers {
        let mut it = fl
            .outcome
            .history
            .iter()
            .filter_map(|h| h.workers.iter().find(|w| w.worker_id == k).map(|w| (h.round, w.train_loss)));
        let (round, min) = argmin(&mut it);
        if round > 0 {
            t.push(vec![format!("worker_{k}"), fmt_f64(min), round.to_string()]);
        }
    }

    let fed_losses = fl
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, params)| Ok((i + 1, data_loss(params, &setup.dataset, loss)?)))
        .collect::<Result<Vec<_>>>()?;
    let (round, min) = argmin(&mut fed_losses.into_iter());
    t.push(vec!["federated".to_string(), fmt_f64(min), round.to_string()]);

    let mut central = setup.initial;
    let mut central_losses = Vec::with_capacity(fed.rounds);
    for r in 1..=fed.rounds {
        central = train_centralized(&central, &setup.dataset, &train, derive_path(fed.seed, &[stream::CENTRAL, r as u64]))?;
        central_losses.push((r, data_loss(&central, &setup.dataset, loss)?));
    }
    let (round, min) = argmin(&mut central_losses.into_iter());
    t.push(vec!["centralized".to_string(), fmt_f64(min), round.to_string()]);
    Ok(t)
}

fn miou_series(run: &VariantRun, name: &str) -> Series {
    Series::new(
        name,
        run.outcome.history.iter().map(|h| (h.round as f64, h.global_miou)).collect(),
    )
}

/// Write one variant's CSVs, chart and optional checkpoints into `dir`.
pub fn write_variant(run: &VariantRun, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = write_results(&run.outcome.history, dir)?;
    let mut series = vec![miou_series(run, "global mIoU")];
    let priority = run.variant.fed.priority_class;
    let oil: Vec<(f64, f64)> = run
        .outcome
        .history
        .iter()
        .filter_map(|h| h.global_per_class_iou.get(priority).copied().flatten().map(|v| (h.round as f64, v)))
        .collect();
    if !oil.is_empty() {
        series.push(Series::new("priority-class IoU", oil));
    }
    let chart = dir.join("miou.svg");
    emit_chart_labelled(&series, &chart, &run.variant.label, "round", "IoU")?;
    files.push(chart);
    for (i, params) in run.checkpoints.iter().enumerate() {
        let path = dir.join(format!("round_{}.json", i + 1));
        params.save(&path)?;
        files.push(path);
    }
    Ok(files)
}

/// Write a report under `out_dir`. A single run writes straight into
/// `out_dir`; a preset writes `out_dir/<preset>/<variant>/` per variant plus
/// the summary table and a comparison chart at `out_dir/<preset>/`.
pub fn write_report(report: &PresetReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let Some(preset) = report.preset else {
        return write_variant(&report.runs[0], out_dir);
    };
    let root = out_dir.join(preset.name());
    fs::create_dir_all(&root).map_err(|e| FedError::io(&root, e))?;
    let mut files = Vec::new();
    for run in &report.runs {
        files.extend(write_variant(run, &root.join(&run.variant.label))?);
    }
    if let Some(table) = &report.table {
        let path = root.join(preset.table_file());
        table.write(&path)?;
        files.push(path);
    }
    let (series, y_label): (Vec<Series>, &str) = match preset {
        Preset::AlphaSweep => (
            report
                .runs
                .iter()
                .map(|r| {
                    Series::new(
                        r.variant.label.clone(),
                        r.outcome.history.iter().map(|h| (h.round as f64, h.train_loss)).collect(),
                    )
                })
                .collect(),
            "training loss",
        ),
        _ => (report.runs.iter().map(|r| miou_series(r, &r.variant.label)).collect(), "global mIoU"),
    };
    let chart = root.join("comparison.svg");
    emit_chart_labelled(&series, &chart, preset.name(), "round", y_label)?;
    files.push(chart);
    Ok(files)
}
