//! Participant sampling, relevant-worker selection and the threshold controller.

use serde::{Deserialize, Serialize};

use super::config::{ThetaRule, ThresholdRule};
use crate::metrics::WorkerEval;
use crate::seed::{derive_path, stream, SplitMix64};

/// `max(ceil(C * K), 1)`, capped at `K`.
pub fn participant_count(n_workers: usize, participation: f64) -> usize {
    // The small offset keeps e.g. 0.3 * 10 = 3.0000000000000004 at 3.
    let m = (participation * n_workers as f64 - 1e-9).ceil().max(1.0) as usize;
    m.min(n_workers)
}

/// Sorted ids of the workers sampled for `round`, drawn without replacement.
pub fn sample_participants(n_workers: usize, participation: f64, seed: u64, round: usize) -> Vec<usize> {
    let m = participant_count(n_workers, participation);
    let mut ids: Vec<usize> = (0..n_workers).collect();
    let mut rng = SplitMix64::new(derive_path(seed, &[stream::SAMPLING, round as u64]));
    for i in 0..m {
        let j = i + rng.below((n_workers - i) as u64) as usize;
        ids.swap(i, j);
    }
    ids.truncate(m);
    ids.sort_unstable();
    ids
}

/// Relevant (`r_f`) and rejected (`n_f`) workers of one round, each in
/// ascending worker-id order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub relevant: Vec<WorkerEval>,
    pub rejected: Vec<WorkerEval>,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.relevant.len() + self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn relevant_ids(&self) -> Vec<usize> {
        self.relevant.iter().map(|e| e.worker_id).collect()
    }

    pub fn rejected_ids(&self) -> Vec<usize> {
        self.rejected.iter().map(|e| e.worker_id).collect()
    }
}

/// A worker is relevant iff `miou >= t_h` and `theta >= theta_min`.
pub fn relevant_worker_selection(evals: &[WorkerEval], t_h: f64, theta_min: f64) -> Selection {
    relevant_worker_selection_with(evals, t_h, theta_min, ThetaRule::AtLeast)
}

pub fn relevant_worker_selection_with(evals: &[WorkerEval], t_h: f64, theta_min: f64, rule: ThetaRule) -> Selection {
    let mut sorted: Vec<&WorkerEval> = evals.iter().collect();
    sorted.sort_by_key(|e| e.worker_id);
    let mut sel = Selection::default();
    for e in sorted {
        let theta_ok = match rule {
            ThetaRule::AtLeast => e.theta >= theta_min,
            ThetaRule::Above => e.theta > theta_min,
        };
        if t_h <= e.miou && theta_ok {
            sel.relevant.push(e.clone());
        } else {
            sel.rejected.push(e.clone());
        }
    }
    sel
}

/// Median; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

/// Which branch of the controller fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdBranch {
    HighestRejected,
    MedianRejected,
    Step,
    /// The branch needed rejected workers but there were none.
    StepFallback,
}

fn band_size(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Next threshold, clamped to `[0, 1]`. With `s = |S_t|` and `r = |r_f|`:
///
/// - `0 < r <= ceil(low_band * s)`: highest mIoU among rejected workers;
/// - `r == 0` or `r >= ceil(high_band * s)`: median mIoU of rejected workers;
/// - otherwise `t_h + step`.
///
/// When a branch needs rejected workers and there are none, `t_h + step`.
pub fn dynamic_threshold(sel: &Selection, t_h: f64, rule: &ThresholdRule) -> f64 {
    dynamic_threshold_branch(sel, t_h, rule).0
}

pub(crate) fn dynamic_threshold_branch(sel: &Selection, t_h: f64, rule: &ThresholdRule) -> (f64, ThresholdBranch) {
    let s = sel.len();
    let r = sel.relevant.len();
    let rejected: Vec<f64> = sel.rejected.iter().map(|e| e.miou).collect();
    let stepped = (t_h + rule.step, ThresholdBranch::StepFallback);
    let (next, branch) = if r > 0 && r <= band_size(rule.low_band, s) {
        rejected
            .iter()
            .copied()
            .reduce(f64::max)
            .map_or(stepped, |m| (m, ThresholdBranch::HighestRejected))
    } else if r == 0 || r >= band_size(rule.high_band, s) {
        median(&rejected).map_or(stepped, |m| (m, ThresholdBranch::MedianRejected))
    } else {
        (t_h + rule.step, ThresholdBranch::Step)
    };
    (next.clamp(0.0, 1.0), branch)
}
