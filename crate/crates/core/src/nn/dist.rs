//! Action distributions: categorical over leaf steps, Gaussian over MU.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;

/// Bounds applied to the MU policy's log standard deviation.
pub const LOG_STD_BOUNDS: (f64, f64) = (-5.0, 2.0);

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalEval {
    pub logprob: f64,
    pub entropy: f64,
    /// d logprob / d logits
    pub dlogprob: Vec<f64>,
    /// d entropy / d logits
    pub dentropy: Vec<f64>,
}

pub fn categorical_logprob_entropy(logits: &[f64], action: usize) -> CategoricalEval {
    let logp = log_softmax(logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let entropy = -probs
        .iter()
        .zip(&logp)
        .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
        .sum::<f64>();
    let dlogprob = probs
        .iter()
        .enumerate()
        .map(|(j, p)| if j == action { 1.0 - p } else { -p })
        .collect();
    let dentropy = probs.iter().zip(&logp).map(|(p, l)| -p * (l + entropy)).collect();
    CategoricalEval {
        logprob: logp[action],
        entropy,
        dlogprob,
        dentropy,
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let logp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}

/// Index of the largest logit; first on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEval {
    pub logprob: f64,
    pub entropy: f64,
    pub dlogprob_dmean: f64,
    pub dlogprob_dlog_std: f64,
    pub dentropy_dlog_std: f64,
}

pub fn gaussian_logprob_entropy(mean: f64, log_std: f64, action: f64) -> GaussianEval {
    let var = (2.0 * log_std).exp();
    let diff = action - mean;
    GaussianEval {
        logprob: -diff * diff / (2.0 * var) - log_std - 0.5 * (2.0 * PI).ln(),
        entropy: 0.5 * (2.0 * PI * E).ln() + log_std,
        dlogprob_dmean: diff / var,
        dlogprob_dlog_std: diff * diff / var - 1.0,
        dentropy_dlog_std: 1.0,
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(mean: f64, log_std: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + log_std.exp() * z
}
