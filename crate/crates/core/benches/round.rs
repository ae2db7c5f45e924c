//! One federated round on the desk-scale task, on a single-thread pool and
//! on the default pool. Build with `--no-default-features` to time the
//! sequential fallback instead of rayon.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fedbal::federation::{prepare_experiment, run_federated_round, DataConfig, FedConfig, GlobalState};
use fedbal::par;

fn bench_round(c: &mut Criterion) {
    let mut fed = FedConfig::default();
    fed.train.epochs = 5;
    let data = DataConfig::default();
    let setup = prepare_experiment(&fed, &data).expect("setup");
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let backend = if par::PARALLEL { "rayon" } else { "sequential" };

    let mut group = c.benchmark_group(format!("federated_round/{backend}"));
    group.sample_size(20);
    for (label, n) in [("1_thread", 1), ("all_threads", threads)] {
        group.bench_function(label, |b| {
            par::with_threads(n, || {
                b.iter(|| {
                    let state = GlobalState::new(setup.initial.clone(), &fed);
                    black_box(run_federated_round(state, &setup.shards, &setup.aux_test, &fed).expect("round"))
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_round);
criterion_main!(benches);
