//! Splitting a dataset across workers.
//!
//! All partitioners hand every dataset sample to exactly one worker
//! (`WorkerShard::sample_ids` records the origin). The class-restricted
//! partitioners additionally relabel pixels of classes a worker was not
//! assigned to background, and stamp a small blob of an assigned class into
//! the shard when none of its routed samples happened to contain it.

use std::collections::{BTreeSet, VecDeque};

use super::{label_histogram, stamp_class, ImageSample, WorkerShard};
use crate::error::{FedError, Result};
use crate::seed::{derive, derive_path, stream, SplitMix64};

fn check_sizes(dataset: &[ImageSample], n_workers: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(FedError::invalid("dataset is empty"));
    }
    if n_workers == 0 {
        return Err(FedError::invalid("n_workers must be at least 1"));
    }
    if n_workers > dataset.len() {
        return Err(FedError::invalid(format!(
            "{n_workers} workers but only {} samples",
            dataset.len()
        )));
    }
    Ok(())
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(derive(seed, stream::PARTITION_SHUFFLE)).shuffle(&mut order);
    order
}

/// Shuffle by seed, then deal round-robin. Shard sizes differ by at most one.
pub fn partition_iid(dataset: &[ImageSample], n_workers: usize, seed: u64) -> Result<Vec<WorkerShard>> {
    check_sizes(dataset, n_workers)?;
    let mut ids = vec![Vec::new(); n_workers];
    for (pos, idx) in shuffled_indices(dataset.len(), seed).into_iter().enumerate() {
        ids[pos % n_workers].push(idx);
    }
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(w, ids)| {
            let samples = ids.iter().map(|&i| dataset[i].clone()).collect();
            WorkerShard::new(w, ids, samples)
        })
        .collect())
}

/// Every worker gets `classes_per_worker` non-background classes (capped at
/// the number of non-background classes) plus the background class.
pub fn partition_noniid(
    dataset: &[ImageSample],
    n_workers: usize,
    classes_per_worker: usize,
    seed: u64,
) -> Result<Vec<WorkerShard>> {
    check_sizes(dataset, n_workers)?;
    let n_classes = dataset[0].feature_dim;
    if classes_per_worker == 0 || classes_per_worker > n_classes {
        return Err(FedError::invalid(format!(
            "classes_per_worker {classes_per_worker} outside [1, {n_classes}]"
        )));
    }
    partition_by_class_counts(dataset, &vec![classes_per_worker; n_workers], seed)
}

/// Like [`partition_noniid`], with each worker's class count drawn uniformly
/// from `[min_classes, max_classes]`.
pub fn partition_noniid_unbalanced(
    dataset: &[ImageSample],
    n_workers: usize,
    seed: u64,
    min_classes: usize,
    max_classes: usize,
) -> Result<Vec<WorkerShard>> {
    check_sizes(dataset, n_workers)?;
    let n_classes = dataset[0].feature_dim;
    if min_classes == 0 || min_classes > max_classes || max_classes > n_classes {
        return Err(FedError::invalid(format!(
            "class range [{min_classes}, {max_classes}] outside [1, {n_classes}]"
        )));
    }
    let mut rng = SplitMix64::new(derive(seed, stream::PARTITION_COUNTS));
    let counts: Vec<usize> = (0..n_workers)
        .map(|_| rng.range_inclusive(min_classes, max_classes))
        .collect();
    partition_by_class_counts(dataset, &counts, seed)
}

/// Non-background classes assigned to each worker. Classes are drawn from a
/// stream of seeded permutations, so every class is handed out once before
/// any class is handed out twice; a class the worker already holds is
/// deferred to the next worker.
pub(crate) fn assign_classes(minority: &[usize], counts: &[usize], seed: u64) -> Vec<BTreeSet<usize>> {
    let mut rng = SplitMix64::new(derive(seed, stream::PARTITION_ASSIGN));
    let mut queue: VecDeque<usize> = VecDeque::new();
    counts
        .iter()
        .map(|&want| {
            let want = want.min(minority.len());
            let mut held = BTreeSet::new();
            let mut deferred = Vec::new();
            while held.len() < want {
                if queue.is_empty() {
                    let mut perm = minority.to_vec();
                    rng.shuffle(&mut perm);
                    queue.extend(perm);
                }
                let c = queue.pop_front().unwrap();
                if !held.insert(c) {
                    deferred.push(c);
                }
            }
            for c in deferred.into_iter().rev() {
                queue.push_front(c);
            }
            held
        })
        .collect()
}

fn partition_by_class_counts(dataset: &[ImageSample], counts: &[usize], seed: u64) -> Result<Vec<WorkerShard>> {
    let n_workers = counts.len();
    let n_classes = dataset[0].feature_dim;
    let hist = label_histogram(dataset, n_classes);
    let background = (0..n_classes).fold(0, |best, c| if hist[c] > hist[best] { c } else { best });
    let minority: Vec<usize> = (0..n_classes).filter(|&c| c != background).collect();
    let assigned = assign_classes(&minority, counts, seed);

    // Route samples greedily: prefer the worker for which the sample covers
    // the most still-missing assigned classes, then the most assigned
    // classes, then the smaller shard, then the lower id. Shard sizes are
    // fixed up front to the round-robin sizes.
    let n = dataset.len();
    let target: Vec<usize> = (0..n_workers)
        .map(|w| n / n_workers + usize::from(w < n % n_workers))
        .collect();
    let mut ids: Vec<Vec<usize>> = vec![Vec::new(); n_workers];
    let mut covered: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_workers];
    for idx in shuffled_indices(n, seed) {
        let present = dataset[idx].classes_present();
        let best = (0..n_workers)
            .filter(|&w| ids[w].len() < target[w])
            .max_by_key(|&w| {
                let hits: BTreeSet<usize> = present.intersection(&assigned[w]).copied().collect();
                let fresh = hits.difference(&covered[w]).count();
                (fresh, hits.len(), std::cmp::Reverse(ids[w].len()), std::cmp::Reverse(w))
            })
            .expect("target sizes sum to the dataset size");
        covered[best].extend(present.intersection(&assigned[best]).copied());
        ids[best].push(idx);
    }

    let scene_pixels = (dataset[0].height * dataset[0].width) as f64;
    let total_pixels: u64 = hist.iter().sum();

    let shards = ids
        .into_iter()
        .enumerate()
        .map(|(w, ids)| {
            let mut keep = assigned[w].clone();
            keep.insert(background);
            let mut samples: Vec<ImageSample> = ids.iter().map(|&i| dataset[i].clone()).collect();
            for s in &mut samples {
                for p in 0..s.n_pixels() {
                    if !keep.contains(&(s.labels[p] as usize)) {
                        s.relabel_pixel(p, background);
                    }
                }
            }
            let present: BTreeSet<usize> = samples.iter().flat_map(|s| s.classes_present()).collect();
            for &c in assigned[w].difference(&present) {
                let mut rng = SplitMix64::new(derive_path(seed, &[stream::PARTITION_RESTAMP, w as u64, c as u64]));
                let expected = hist[c] as f64 / total_pixels as f64 * scene_pixels;
                let budget = (expected.round() as usize).max(1);
                let target = &mut samples[rng.below(ids.len() as u64) as usize];
                let mut labels = target.labels.clone();
                stamp_class(&mut rng, &mut labels, target.height, target.width, background as u8, c as u8, budget);
                for (p, (&new, &old)) in labels.iter().zip(target.labels.clone().iter()).enumerate() {
                    if new != old {
                        target.relabel_pixel(p, new as usize);
                    }
                }
            }
            WorkerShard::new(w, ids, samples)
        })
        .collect();
    Ok(shards)
}
