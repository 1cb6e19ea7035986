//! Per-sample loss kernels over logit vectors.

use serde::{Deserialize, Serialize};

/// Loss `v(f(x), y)` applied per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFn {
    CrossEntropy,
    ZeroOne,
    /// Two-way cross-entropy using only logits `k` and `l`.
    RestrictedPairCrossEntropy(usize, usize),
    /// Two-way argmax error using only logits `k` and `l`.
    RestrictedPairZeroOne(usize, usize),
}

impl LossFn {
    /// The same loss restricted to the logit pair `(k, l)`.
    pub fn restricted_to(self, k: usize, l: usize) -> Self {
        match self {
            LossFn::CrossEntropy | LossFn::RestrictedPairCrossEntropy(..) => {
                LossFn::RestrictedPairCrossEntropy(k, l)
            }
            LossFn::ZeroOne | LossFn::RestrictedPairZeroOne(..) => LossFn::RestrictedPairZeroOne(k, l),
        }
    }

    pub fn eval(&self, logits: &[f64], label: usize) -> f64 {
        match *self {
            LossFn::CrossEntropy => cross_entropy(logits, label),
            LossFn::ZeroOne => zero_one(argmax(logits), label),
            LossFn::RestrictedPairCrossEntropy(k, l) => subset_cross_entropy(logits, label, &[k, l]),
            LossFn::RestrictedPairZeroOne(k, l) => zero_one(argmax_subset(logits, &[k, l]), label),
        }
    }
}

fn zero_one(pred: usize, label: usize) -> f64 {
    if pred == label {
        0.0
    } else {
        1.0
    }
}

/// `log(sum(exp(z)))` shifted by the maximum.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| (z - lse).exp()).collect()
}

pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    softmax(&scaled)
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Cross-entropy of `label` among the logits listed in `subset`.
/// `label` must be a member of `subset`.
pub fn subset_cross_entropy(logits: &[f64], label: usize, subset: &[usize]) -> f64 {
    let picked: Vec<f64> = subset.iter().map(|&c| logits[c]).collect();
    log_sum_exp(&picked) - logits[label]
}

/// Adds `scale * dCE/dz` of the subset cross-entropy into `dlogits`.
/// Entries outside `subset` are untouched.
pub fn subset_cross_entropy_grad(
    logits: &[f64],
    label: usize,
    subset: &[usize],
    scale: f64,
    dlogits: &mut [f64],
) {
    let picked: Vec<f64> = subset.iter().map(|&c| logits[c]).collect();
    let p = softmax(&picked);
    for (&c, &pc) in subset.iter().zip(&p) {
        dlogits[c] += scale * pc;
    }
    dlogits[label] -= scale;
}

/// Adds `scale * dCE/dz` of the full cross-entropy into `dlogits`.
pub fn cross_entropy_grad(logits: &[f64], label: usize, scale: f64, dlogits: &mut [f64]) {
    let p = softmax(logits);
    for (d, pc) in dlogits.iter_mut().zip(p) {
        *d += scale * pc;
    }
    dlogits[label] -= scale;
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax over `subset`, returning the class id. Ties go to the earliest
/// entry of `subset`, which callers keep sorted.
pub fn argmax_subset(values: &[f64], subset: &[usize]) -> usize {
    let mut best = subset[0];
    for &c in &subset[1..] {
        if values[c] > values[best] {
            best = c;
        }
    }
    best
}
