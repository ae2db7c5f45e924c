//! Tversky index / loss family and cross-entropy over soft per-pixel predictions.
//!
//! The multi-class Tversky loss builds soft counts per class `c`:
//!
//! ```text
//! TP_c = sum_i p_ic [y_i = c]
//! FN_c = sum_i (1 - p_ic) [y_i = c]
//! FP_c = sum_i p_ic [y_i != c]
//! T_c  = (TP_c + eps) / (TP_c + alpha FN_c + beta FP_c + eps)
//! loss = 1 - mean_{c present in labels} T_c
//! ```
//!
//! The `*_with_grad` variants also return `d loss / d p` so the model can
//! backpropagate through its softmax.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_BETA: f64 = 0.3;
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Probabilities are clamped to this floor inside the cross-entropy log.
pub const CE_FLOOR: f64 = 1e-12;

/// Weights of the false-negative (`alpha`) and false-positive (`beta`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TverskySpec {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl TverskySpec {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let spec = TverskySpec { alpha, beta, epsilon };
        spec.validate()?;
        Ok(spec)
    }

    /// `beta = 1 - alpha`.
    pub fn complementary(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0 - alpha, DEFAULT_EPSILON)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FedError::invalid(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(FedError::invalid(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(FedError::invalid(format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }
}

impl Default for TverskySpec {
    fn default() -> Self {
        TverskySpec {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// `(tp + eps) / (tp + alpha fn + beta fp + eps)`.
pub fn tversky_index(tp: f64, fn_: f64, fp: f64, spec: &TverskySpec) -> Result<f64> {
    if !(tp >= 0.0 && fn_ >= 0.0 && fp >= 0.0) {
        return Err(FedError::invalid(format!(
            "tversky counts must be non-negative (tp={tp}, fn={fn_}, fp={fp})"
        )));
    }
    Ok((tp + spec.epsilon) / (tp + spec.alpha * fn_ + spec.beta * fp + spec.epsilon))
}

/// Per-pixel class probabilities, row-major `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub data: Vec<f64>,
}

impl ProbMap {
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_classes..(p + 1) * self.n_classes]
    }

    /// Hard prediction per pixel; ties resolve to the lowest class index.
    pub fn argmax(&self) -> Vec<u8> {
        (0..self.n_pixels())
            .map(|p| argmax(self.pixel(p)) as u8)
            .collect()
    }
}

#[inline]
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_shapes(probs: &[f64], labels: &[u8], n_classes: usize) -> Result<()> {
    if n_classes == 0 || probs.len() != labels.len() * n_classes {
        return Err(FedError::invalid(format!(
            "probability buffer of {} entries does not match {} labels x {} classes",
            probs.len(),
            labels.len(),
            n_classes
        )));
    }
    if labels.is_empty() {
        return Err(FedError::invalid("no pixels to score"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(FedError::invalid(format!("label {l} >= n_classes {n_classes}")));
    }
    Ok(())
}

fn check_map(probs: &ProbMap, labels: &[u8]) -> Result<()> {
    if probs.n_pixels() != labels.len() || probs.data.len() != probs.n_pixels() * probs.n_classes {
        return Err(FedError::invalid(format!(
            "probability map {}x{}x{} does not match {} labels",
            probs.height,
            probs.width,
            probs.n_classes,
            labels.len()
        )));
    }
    Ok(())
}

pub fn tversky_loss_multiclass(probs: &ProbMap, labels: &[u8], spec: &TverskySpec) -> Result<f64> {
    check_map(probs, labels)?;
    tversky_loss_with_grad(&probs.data, labels, probs.n_classes, spec, None)
}

pub fn cross_entropy(probs: &ProbMap, labels: &[u8]) -> Result<f64> {
    check_map(probs, labels)?;
    cross_entropy_with_grad(&probs.data, labels, probs.n_classes, None)
}

/// Pooled multi-class Tversky loss over a flat `N x C` buffer. When `grad`
/// is given it receives `d loss / d p` (overwritten, same layout as `probs`).
pub fn tversky_loss_with_grad(
    probs: &[f64],
    labels: &[u8],
    n_classes: usize,
    spec: &TverskySpec,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_shapes(probs, labels, n_classes)?;
    spec.validate()?;
    let (a, b, eps) = (spec.alpha, spec.beta, spec.epsilon);

    // Work in (tp, support, mass) so the gradient stays simple:
    // den = (1 - a - b) tp + a support + b mass + eps.
    let mut tp = vec![0.0; n_classes];
    let mut support = vec![0.0; n_classes];
    let mut mass = vec![0.0; n_classes];
    for (px, &y) in probs.chunks_exact(n_classes).zip(labels) {
        let y = y as usize;
        tp[y] += px[y];
        support[y] += 1.0;
        for (m, &p) in mass.iter_mut().zip(px) {
            *m += p;
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| support[c] > 0.0).collect();
    let k = present.len() as f64;

    let mut index_sum = 0.0;
    // d T_c / d tp_c and d T_c / d mass_c; zero for absent classes.
    let mut d_tp = vec![0.0; n_classes];
    let mut d_mass = vec![0.0; n_classes];
    for &c in &present {
        let fn_c = support[c] - tp[c];
        let fp_c = mass[c] - tp[c];
        let num = tp[c] + eps;
        let den = tp[c] + a * fn_c + b * fp_c + eps;
        index_sum += num / den;
        let den2 = den * den;
        d_tp[c] = (den - num * (1.0 - a - b)) / den2;
        d_mass[c] = -num * b / den2;
    }
    let loss = 1.0 - index_sum / k;

    if let Some(g) = grad {
        debug_assert_eq!(g.len(), probs.len());
        for (gp, &y) in g.chunks_exact_mut(n_classes).zip(labels) {
            let y = y as usize;
            for c in 0..n_classes {
                let mut d = d_mass[c];
                if c == y {
                    d += d_tp[c];
                }
                gp[c] = -d / k;
            }
        }
    }
    Ok(loss)
}

/// Mean `-ln max(p_true, CE_FLOOR)`, optionally with `d loss / d p`.
pub fn cross_entropy_with_grad(probs: &[f64], labels: &[u8], n_classes: usize, grad: Option<&mut [f64]>) -> Result<f64> {
    check_shapes(probs, labels, n_classes)?;
    let n = labels.len() as f64;
    let loss = probs
        .chunks_exact(n_classes)
        .zip(labels)
        .map(|(px, &y)| -px[y as usize].max(CE_FLOOR).ln())
        .sum::<f64>()
        / n;
    if let Some(g) = grad {
        g.fill(0.0);
        for ((gp, px), &y) in g.chunks_exact_mut(n_classes).zip(probs.chunks_exact(n_classes)).zip(labels) {
            let p = px[y as usize];
            if p > CE_FLOOR {
                gp[y as usize] = -1.0 / (n * p);
            }
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: f64, beta: f64) -> TverskySpec {
        TverskySpec::new(alpha, beta, 1e-6).unwrap()
    }

    fn one_hot_map(labels: &[u8], c: usize) -> ProbMap {
        let mut data = vec![0.0; labels.len() * c];
        for (p, &l) in labels.iter().enumerate() {
            data[p * c + l as usize] = 1.0;
        }
        ProbMap {
            height: 1,
            width: labels.len(),
            n_classes: c,
            data,
        }
    }

    #[test]
    fn index_examples() {
        assert_eq!(tversky_index(5.0, 0.0, 0.0, &spec(0.7, 0.3)).unwrap(), 1.0);
        let exact = TverskySpec { epsilon: 1e-300, ..spec(0.7, 0.3) };
        assert!((tversky_index(3.0, 1.0, 2.0, &exact).unwrap() - 3.0 / 4.3).abs() < 1e-12);
        let dice = TverskySpec { epsilon: 1e-300, ..spec(0.5, 0.5) };
        assert!((tversky_index(3.0, 1.0, 2.0, &dice).unwrap() - 6.0 / 9.0).abs() < 1e-12);
        let jac = TverskySpec { epsilon: 1e-300, ..spec(1.0, 1.0) };
        assert!((tversky_index(3.0, 1.0, 2.0, &jac).unwrap() - 0.5).abs() < 1e-12);
        assert!(tversky_index(-1.0, 0.0, 0.0, &exact).is_err());
        // All-zero counts: the smoothing term makes the index 1.
        assert_eq!(tversky_index(0.0, 0.0, 0.0, &exact).unwrap(), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(TverskySpec::new(-0.1, 0.3, 1e-6).is_err());
        assert!(TverskySpec::new(0.7, 0.3, 0.0).is_err());
        let s = TverskySpec::complementary(0.8).unwrap();
        assert!((s.beta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let labels = [0u8, 1, 2, 1, 0, 0];
        let m = one_hot_map(&labels, 3);
        assert!(tversky_loss_multiclass(&m, &labels, &spec(0.7, 0.3)).unwrap().abs() < 1e-12);
        assert_eq!(cross_entropy(&m, &labels).unwrap(), 0.0);
    }

    #[test]
    fn uniform_single_class_closed_form() {
        // 2x2 grid, all pixels class 0, C = 3, p = 1/3 everywhere.
        // Only class 0 is present: TP = 4/3, FN = 8/3, FP = 0.
        let labels = [0u8; 4];
        let m = ProbMap {
            height: 2,
            width: 2,
            n_classes: 3,
            data: vec![1.0 / 3.0; 12],
        };
        let s = spec(0.7, 0.3);
        let (tp, fn_) = (4.0 / 3.0, 8.0 / 3.0);
        let expected = 1.0 - (tp + 1e-6) / (tp + 0.7 * fn_ + 1e-6);
        let got = tversky_loss_multiclass(&m, &labels, &s).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((cross_entropy(&m, &labels).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_grows_with_alpha_when_under_predicting() {
        // Class 1 keeps only 0.3 of its mass; leaked mass goes to class 2,
        // which never occurs in the labels. Both present classes have FN > FP.
        let labels = [1u8, 1, 1, 1, 0, 0, 0, 0];
        let mut data = Vec::new();
        for &l in &labels {
            if l == 1 {
                data.extend([0.05, 0.3, 0.65]);
            } else {
                data.extend([0.9, 0.05, 0.05]);
            }
        }
        let m = ProbMap {
            height: 2,
            width: 4,
            n_classes: 3,
            data,
        };
        let losses: Vec<f64> = [0.5, 0.6, 0.7, 0.8]
            .iter()
            .map(|&a| tversky_loss_multiclass(&m, &labels, &TverskySpec::complementary(a).unwrap()).unwrap())
            .collect();
        assert!(losses.windows(2).all(|w| w[1] > w[0]), "{losses:?}");
    }

    #[test]
    fn cross_entropy_hand_value() {
        // 2x2, C = 2: p_true = 0.8, 0.6, 0.9, 0.5.
        let labels = [0u8, 1, 0, 1];
        let m = ProbMap {
            height: 2,
            width: 2,
            n_classes: 2,
            data: vec![0.8, 0.2, 0.4, 0.6, 0.9, 0.1, 0.5, 0.5],
        };
        let expected = -(0.8f64.ln() + 0.6f64.ln() + 0.9f64.ln() + 0.5f64.ln()) / 4.0;
        assert!((cross_entropy(&m, &labels).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.383_119_3).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_is_clamped() {
        let labels = [1u8];
        let m = ProbMap {
            height: 1,
            width: 1,
            n_classes: 2,
            data: vec![1.0, 0.0],
        };
        assert!((cross_entropy(&m, &labels).unwrap() + CE_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = one_hot_map(&[0, 1], 2);
        assert!(tversky_loss_multiclass(&m, &[0, 1, 1], &spec(0.7, 0.3)).is_err());
        assert!(cross_entropy(&m, &[0]).is_err());
        assert!(cross_entropy(&m, &[0, 5]).is_err());
    }

    #[test]
    fn prob_gradient_matches_finite_differences() {
        let labels = [0u8, 1, 2, 1, 1, 0];
        let c = 3;
        let mut probs = Vec::new();
        for i in 0..labels.len() {
            let raw = [1.0 + i as f64 * 0.3, 0.5 + (i % 2) as f64, 0.7];
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|r| r / s));
        }
        let s = spec(0.7, 0.3);
        let mut grad = vec![0.0; probs.len()];
        tversky_loss_with_grad(&probs, &labels, c, &s, Some(&mut grad)).unwrap();
        let mut ce_grad = vec![0.0; probs.len()];
        cross_entropy_with_grad(&probs, &labels, c, Some(&mut ce_grad)).unwrap();
        let h = 1e-6;
        for j in 0..probs.len() {
            let mut up = probs.clone();
            let mut dn = probs.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (tversky_loss_with_grad(&up, &labels, c, &s, None).unwrap()
                - tversky_loss_with_grad(&dn, &labels, c, &s, None).unwrap())
                / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-7, "tversky {j}: {fd} vs {}", grad[j]);
            let fd = (cross_entropy_with_grad(&up, &labels, c, None).unwrap()
                - cross_entropy_with_grad(&dn, &labels, c, None).unwrap())
                / (2.0 * h);
            assert!((fd - ce_grad[j]).abs() < 1e-7, "ce {j}: {fd} vs {}", ce_grad[j]);
        }
    }
}
