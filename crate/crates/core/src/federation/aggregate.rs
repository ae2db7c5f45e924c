//! Server-side aggregation.

use crate::error::{FedError, Result};
use crate::model::ModelParams;

/// `n_m / sum(n)` for every update.
pub fn fedavg_weights(sizes: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = sizes.iter().sum();
    if total == 0 {
        return Err(FedError::invalid("aggregation weights sum to zero"));
    }
    Ok(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Weighted mean `sum_m p_m w_m` with `p_m = n_m / sum(n)`, accumulated in
/// input order. Each coordinate is clamped into the `[min, max]` range of the
/// inputs so rounding can never leave the convex hull; in particular
/// identical inputs come back unchanged. `None` means nothing to aggregate.
pub fn aggregate_fedavg(updates: &[(&ModelParams, u64)]) -> Result<Option<ModelParams>> {
    let Some(&(first, _)) = updates.first() else {
        return Ok(None);
    };
    if updates.iter().any(|(p, _)| !p.same_shape(first)) {
        return Err(FedError::invalid("cannot aggregate models of different shapes"));
    }
    let sizes: Vec<u64> = updates.iter().map(|&(_, n)| n).collect();
    let weights = fedavg_weights(&sizes)?;
    let mut out = ModelParams::zeros(first.feature_dim, first.n_classes);
    for (j, w) in out.weights.iter_mut().enumerate() {
        let mut acc = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((params, _), p) in updates.iter().zip(&weights) {
            let v = params.weights[j];
            acc += p * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        *w = acc.clamp(lo, hi);
    }
    Ok(Some(out))
}

/// One server step `w - lr * sum_m p_m g_m`. An empty gradient list leaves
/// the global model unchanged.
pub fn aggregate_fedsgd(global: &ModelParams, grads: &[(&[f64], u64)], learning_rate: f64) -> Result<ModelParams> {
    if grads.is_empty() {
        return Ok(global.clone());
    }
    if grads.iter().any(|(g, _)| g.len() != global.len()) {
        return Err(FedError::invalid("gradient length differs from the global model"));
    }
    let sizes: Vec<u64> = grads.iter().map(|&(_, n)| n).collect();
    let weights = fedavg_weights(&sizes)?;
    let mut out = global.clone();
    for (j, w) in out.weights.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ((g, _), p) in grads.iter().zip(&weights) {
            acc += p * g[j];
        }
        *w -= learning_rate * acc;
    }
    Ok(out)
}
