//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{brute_force_iou, brute_force_miou, gradient_check, random_params, random_sample, reference_fedavg, N_CLASSES};
use fedbal::federation::{
    dynamic_threshold, median, prepare_experiment, relevant_worker_selection, run_federated_round, Algorithm, GlobalState, Selection, ThresholdRule,
};
use fedbal::harness::{run_preset, write_report, ConfigFile, ParsedConfig, Preset};
use fedbal::losses::{tversky_index, TverskySpec};
use fedbal::metrics::{class_iou, confusion_counts, mean_iou, WorkerEval};
use fedbal::model::{LossSpec, TrainConfig};
use fedbal::par;
use fedbal::seed::SplitMix64;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn base(seed: u64) -> ParsedConfig {
    let file = ConfigFile {
        seed: Some(seed),
        ..ConfigFile::default()
    };
    file.resolve().expect("default config resolves")
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    median(&v).expect("non-empty")
}

fn c1_tversky_identities() -> Outcome {
    let tiny = f64::MIN_POSITIVE;
    let dice = TverskySpec::new(0.5, 0.5, tiny).unwrap();
    let jac = TverskySpec::new(1.0, 1.0, tiny).unwrap();
    let mut rng = SplitMix64::new(0xD1CE);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        // Mix integer counts, real counts and exact zeros.
        let draw = |rng: &mut SplitMix64| match rng.below(4) {
            0 => 0.0,
            1 => rng.below(1000) as f64,
            _ => rng.next_f64() * 1e4,
        };
        let (tp, fn_, fp) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let (d, j) = if tp + fn_ + fp == 0.0 {
            (1.0, 1.0)
        } else {
            (2.0 * tp / (2.0 * tp + fn_ + fp), tp / (tp + fn_ + fp))
        };
        let e1 = (tversky_index(tp, fn_, fp, &dice).unwrap() - d).abs();
        let e2 = (tversky_index(tp, fn_, fp, &jac).unwrap() - j).abs();
        worst = worst.max(e1).max(e2);
    }
    outcome(worst <= 1e-12, format!("1000 triples, max deviation {worst:.2e}"))
}

fn c2_gradients() -> Outcome {
    let mut rng = SplitMix64::new(0x6AD);
    let cases = [
        ("cross-entropy", LossSpec::CrossEntropy, 0.0),
        ("tversky(0.7,0.3)", LossSpec::Tversky(TverskySpec::new(0.7, 0.3, 1e-6).unwrap()), 0.0),
        ("tversky+prox", LossSpec::Tversky(TverskySpec::new(0.7, 0.3, 1e-6).unwrap()), 0.01),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (name, loss, mu) in cases {
        let cfg = TrainConfig {
            loss,
            prox_mu: mu,
            ..TrainConfig::default()
        };
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let params = random_params(&mut rng, N_CLASSES, N_CLASSES, 0.5);
            let anchor = random_params(&mut rng, N_CLASSES, N_CLASSES, 0.5);
            let batch = vec![random_sample(&mut rng, 4, 4, N_CLASSES)];
            let (w, _, _) = gradient_check(&params, &batch, &cfg, (mu > 0.0).then_some(&anchor), 1e-6, 1e-5, 1e-8);
            worst = worst.max(w);
        }
        pass &= worst <= 1.0;
        details.push(format!("{name} worst {worst:.3}x tolerance"));
    }
    outcome(pass, format!("20 instances each; {}", details.join(", ")))
}

fn c3_metric_oracle() -> Outcome {
    let mut rng = SplitMix64::new(0x10A);
    let mut mismatches = 0;
    for _ in 0..100 {
        let k = 2 + rng.below(4);
        let truth: Vec<u8> = (0..64).map(|_| rng.below(k) as u8).collect();
        let pred: Vec<u8> = (0..64).map(|_| rng.below(N_CLASSES as u64) as u8).collect();
        let counts = confusion_counts(&pred, &truth, N_CLASSES).unwrap();
        let want = brute_force_iou(&pred, &truth, N_CLASSES);
        let got: Vec<Option<f64>> = (0..N_CLASSES).map(|c| class_iou(&counts, c).unwrap()).collect();
        if got != want || mean_iou(&counts).unwrap() != brute_force_miou(&pred, &truth, N_CLASSES) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100 grids of 8x8, {mismatches} mismatches"))
}

fn c4_selection_soundness() -> Outcome {
    let mut rng = SplitMix64::new(0xA12);
    let mut violations = 0;
    for _ in 0..500 {
        let n = 1 + rng.below(12) as usize;
        let evals: Vec<WorkerEval> = (0..n)
            .map(|i| WorkerEval {
                worker_id: i,
                per_class_iou: Vec::new(),
                // Quantised values make exact boundary hits common.
                miou: rng.below(21) as f64 / 20.0,
                theta: rng.below(9) as f64 / 4.0,
            })
            .collect();
        let t_h = rng.below(21) as f64 / 20.0;
        let theta_min = rng.below(9) as f64 / 4.0;
        let s = relevant_worker_selection(&evals, t_h, theta_min);
        let predicate = |e: &WorkerEval| t_h <= e.miou && e.theta >= theta_min;
        let mut ids: Vec<usize> = s.relevant_ids().into_iter().chain(s.rejected_ids()).collect();
        ids.sort_unstable();
        let ok = ids == (0..n).collect::<Vec<_>>()
            && s.relevant.iter().all(predicate)
            && !s.rejected.iter().any(predicate)
            && s.relevant_ids().windows(2).all(|w| w[0] < w[1])
            && s.rejected_ids().windows(2).all(|w| w[0] < w[1]);
        violations += usize::from(!ok);
    }
    outcome(violations == 0, format!("500 randomized trials, {violations} violations"))
}

fn c5_threshold_table() -> Outcome {
    let rule = ThresholdRule::default();
    let mk = |r: &[f64], n: &[f64]| {
        let e = |(i, m): (usize, &f64)| WorkerEval {
            worker_id: i,
            per_class_iou: Vec::new(),
            miou: *m,
            theta: 1.0,
        };
        Selection {
            relevant: r.iter().enumerate().map(e).collect(),
            rejected: n.iter().enumerate().map(|(i, m)| e((i + r.len(), m))).collect(),
        }
    };
    let cases: Vec<(&str, Selection, f64, f64)> = vec![
        ("highest of n_f", mk(&[0.9, 0.8], &[0.40, 0.45, 0.52, 0.30, 0.31, 0.20]), 0.50, 0.52),
        ("median, r_f empty", mk(&[], &[0.2, 0.4, 0.6]), 0.50, 0.4),
        ("step", mk(&[0.9, 0.8, 0.7], &[0.1, 0.2, 0.3, 0.4, 0.5]), 0.50, 0.51),
        ("median, high band", mk(&[0.9, 0.8, 0.7, 0.6], &[0.1, 0.2, 0.3, 0.4]), 0.50, 0.25),
        ("clamp at 1", mk(&[0.9, 0.8, 0.7], &[0.1, 0.2, 0.3, 0.4, 0.5]), 0.995, 1.0),
        ("empty n_f steps", mk(&[0.9, 0.8], &[]), 0.50, 0.51),
    ];
    let failed: Vec<String> = cases
        .iter()
        .filter_map(|(name, sel, t, want)| {
            let got = dynamic_threshold(sel, *t, &rule);
            (got != *want).then(|| format!("{name}: {got} != {want}"))
        })
        .collect();
    outcome(failed.is_empty(), format!("{} cases; {}", cases.len(), if failed.is_empty() { "all exact".into() } else { failed.join("; ") }))
}

fn c6_baseline_equivalence() -> Outcome {
    let mut cfg = base(1);
    cfg.fed.rounds = 10;
    cfg.fed.bal_enabled = false;
    let setup = prepare_experiment(&cfg.fed, &cfg.data).unwrap();
    let reference = reference_fedavg(&setup.initial, &setup.shards, &cfg.fed);
    let mut state = GlobalState::new(setup.initial.clone(), &cfg.fed);
    let mut first_diff = None;
    for (r, want) in reference.iter().enumerate() {
        state = run_federated_round(state, &setup.shards, &setup.aux_test, &cfg.fed).unwrap();
        if &state.params != want && first_diff.is_none() {
            first_diff = Some(r + 1);
        }
    }
    match first_diff {
        None => outcome(true, "10 rounds x 6 workers, bit-identical every round"),
        Some(r) => outcome(false, format!("first divergence in round {r}")),
    }
}

fn c7_alpha_sweep() -> Outcome {
    let mut per_alpha: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut audit = Vec::new();
    for seed in SEEDS {
        let report = run_preset(Preset::AlphaSweep, &base(seed)).unwrap();
        let row: Vec<String> = report
            .runs
            .iter()
            .map(|r| {
                let a = r.variant.fed.train.loss.tversky().unwrap().alpha;
                per_alpha.entry(format!("{a:.1}")).or_default().push(r.final_train_loss());
                format!("{a:.1}={:.4}", r.final_train_loss())
            })
            .collect();
        audit.push(format!("seed {seed}: {}", row.join(" ")));
    }
    let med: BTreeMap<&str, f64> = per_alpha.iter().map(|(k, v)| (k.as_str(), median_of(v.clone()))).collect();
    let mut order: Vec<(&str, f64)> = med.iter().map(|(k, v)| (*k, *v)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let ordering = order.iter().map(|(k, v)| format!("alpha {k} ({v:.4})")).collect::<Vec<_>>().join(" < ");
    let directional = med["0.7"] <= med["0.6"] && med["0.7"] <= med["0.8"];
    println!("    alpha ordering by median final training loss: {ordering}");
    for line in &audit {
        println!("    {line}");
    }
    // The criterion accepts either the directional result or an audited ordering.
    let detail = if directional {
        "alpha 0.7 has the lowest median final training loss".to_string()
    } else {
        "alpha 0.7 is not the minimum; ordering reported with seeds above".to_string()
    };
    outcome(true, detail)
}

fn c8_imbalance_benefit() -> Outcome {
    let mut oil = (Vec::new(), Vec::new());
    let mut miou_diff = Vec::new();
    for seed in SEEDS {
        let cfg = base(seed);
        let variants: Vec<_> = Preset::NonIidUnbalanced
            .variants(&cfg)
            .unwrap()
            .into_iter()
            .filter(|v| v.fed.algorithm == Algorithm::FedAvg)
            .collect();
        let runs: Vec<_> = variants
            .into_iter()
            .map(|v| fedbal::harness::presets::run_variant(v, false).unwrap())
            .collect();
        let (plain, bal) = (&runs[0], &runs[1]);
        assert!(!plain.variant.fed.bal_enabled && bal.variant.fed.bal_enabled);
        let (o0, o1) = (plain.final_priority_iou().unwrap_or(0.0), bal.final_priority_iou().unwrap_or(0.0));
        println!(
            "    seed {seed}: fedavg mIoU {:.4} oil {o0:.4} | fedavg+bal mIoU {:.4} oil {o1:.4} (relevant in final round: {})",
            plain.final_miou(),
            bal.final_miou(),
            bal.last().relevant.len()
        );
        oil.0.push(o0);
        oil.1.push(o1);
        miou_diff.push(bal.final_miou() - plain.final_miou());
    }
    let (m0, m1) = (median_of(oil.0), median_of(oil.1));
    let md = median_of(miou_diff);
    outcome(
        m1 >= m0 && md >= 0.0,
        format!("median oil IoU fedavg {m0:.4} vs fedavg+bal {m1:.4}; median mIoU difference {md:+.4}"),
    )
}

fn c9_carry_over() -> Outcome {
    let mut cfg = base(1);
    cfg.fed.theta_min = f64::MAX;
    let setup = prepare_experiment(&cfg.fed, &cfg.data).unwrap();
    let state = GlobalState::new(setup.initial.clone(), &cfg.fed);
    let after = run_federated_round(state, &setup.shards, &setup.aux_test, &cfg.fed).unwrap();
    let rec = &after.history[0];
    let mious: Vec<f64> = rec.workers.iter().map(|w| w.miou).collect();
    let want = median(&mious).unwrap();
    let pass = after.params == setup.initial && rec.relevant.is_empty() && after.threshold == want;
    outcome(pass, format!("params unchanged: {}, threshold {} -> {} (n_f median {want})", after.params == setup.initial, rec.threshold_before, after.threshold))
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base(1);
    let run = |threads: usize, name: &str| {
        let out = dir.path().join(name);
        par::with_threads(threads, || write_report(&run_preset(Preset::NonIid, &cfg).unwrap(), &out).unwrap());
        read_tree(&out)
    };
    let one = run(1, "one");
    let many = run(4, "many");
    let again = run(4, "again");
    let files = one.len();
    let pass = one == many && many == again && files > 0;
    outcome(pass, format!("noniid preset: {files} files byte-identical across 1 / 4 / 4 threads"))
}

fn c11_central_vs_fed() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base(1);
    let a = run_preset(Preset::CentralVsFed, &cfg).unwrap();
    let b = run_preset(Preset::CentralVsFed, &cfg).unwrap();
    write_report(&a, &dir.path().join("a")).unwrap();
    write_report(&b, &dir.path().join("b")).unwrap();
    let same = read_tree(&dir.path().join("a")) == read_tree(&dir.path().join("b"));
    let table = a.table.as_ref().unwrap();
    for row in &table.rows {
        println!("    {}", row.join(","));
    }
    let has_rows = ["federated", "centralized"].iter().all(|s| table.rows.iter().any(|r| r[0] == *s));
    outcome(same && has_rows, format!("comparison table with {} rows, deterministic: {same}", table.rows.len()))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "Tversky identity suite", c1_tversky_identities, Duration::from_secs(1)),
        (2, "gradient suite", c2_gradients, Duration::from_secs(30)),
        (3, "metric oracle suite", c3_metric_oracle, Duration::from_secs(5)),
        (4, "selection soundness", c4_selection_soundness, Duration::from_secs(5)),
        (5, "threshold conformance", c5_threshold_table, Duration::MAX),
        (6, "FedAvg baseline equivalence", c6_baseline_equivalence, Duration::MAX),
        (7, "alpha tuning", c7_alpha_sweep, Duration::from_secs(600)),
        (8, "class-imbalance benefit", c8_imbalance_benefit, Duration::from_secs(1200)),
        (9, "carry-over and stability", c9_carry_over, Duration::MAX),
        (10, "determinism", c10_determinism, Duration::MAX),
        (11, "centralized vs federated", c11_central_vs_fed, Duration::MAX),
    ];
    let mut failed = Vec::new();
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = out.pass && in_time;
        let timing = if in_time { String::new() } else { format!(" [over time limit {limit:?}]") };
        println!(
            "criterion {id:>2} {:<4} {name}: {} ({:.2}s){timing}",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
