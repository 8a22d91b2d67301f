//! Per-leaf-pair reward components and their weighted total.
//!
//! Rows passed to the component functions are one leaf pair's slice of the
//! target, the cumulated fluence and the current binary aperture mask.

use crate::fluence::{aperture_area_perimeter, LeafPair};

/// Weights `λ1..λ5` of the five reward components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights(pub [f64; 5]);

impl Default for RewardWeights {
    fn default() -> Self {
        Self([1.0, 2.0, 2.0, 1.0, 1.0])
    }
}

impl RewardWeights {
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Which reading of the approach/overdose terms to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardVariant {
    /// `>=` headroom test for reward 1; reward 2 counts overdosed cells inside
    /// the aperture.
    #[default]
    Pseudocode,
    /// Strict `>` headroom test; reward 2 counts every cell whose post-step
    /// headroom is below the MU, with no aperture mask.
    Literal,
}

/// Whether reward 5 is measured over the whole aperture or per leaf pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApertureScope {
    #[default]
    Full,
    PerPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub variant: RewardVariant,
    pub aperture: ApertureScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub parts: [f64; 5],
    pub total: f64,
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `mu * Σ mask·1(target − cumu_prev ≥ mu)`.
pub fn reward1(target: &[f64], cumu_prev: &[f64], mask: &[f64], mu: f64) -> f64 {
    let hits: f64 = target
        .iter()
        .zip(cumu_prev)
        .zip(mask)
        .filter(|((t, c), _)| *t - *c >= mu)
        .map(|(_, m)| m)
        .sum();
    mu * hits
}

/// Strict-headroom form of [`reward1`].
pub fn reward1_literal(target: &[f64], cumu_prev: &[f64], mask: &[f64], mu: f64) -> f64 {
    let hits: f64 = target
        .iter()
        .zip(cumu_prev)
        .zip(mask)
        .filter(|((t, c), _)| *t - *c > mu)
        .map(|(_, m)| m)
        .sum();
    mu * hits
}

/// `−Σ mask·1(target − cumu_new < 0)`: open cells pushed past the target.
pub fn reward2(target: &[f64], cumu_new: &[f64], mask: &[f64]) -> f64 {
    let overdosed: f64 = target
        .iter()
        .zip(cumu_new)
        .zip(mask)
        .filter(|((t, c), _)| *t - *c < 0.0)
        .map(|(_, m)| m)
        .sum();
    -overdosed
}

/// Unmasked form of [`reward2`] thresholded at the control point's MU.
pub fn reward2_literal(target: &[f64], cumu_new: &[f64], mu: f64) -> f64 {
    -(target.iter().zip(cumu_new).filter(|(t, c)| *t - *c < mu).count() as f64)
}

/// Crossing penalty on the intended (pre-enforcement) positions.
pub fn reward3(intended: LeafPair) -> f64 {
    match intended.b.cmp(&intended.a) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Less => -1.0,
        std::cmp::Ordering::Equal => 0.0,
    }
}

/// Smoothness term `3 − σ(|Δa|) − σ(|Δb|) − σ(|ΔMU|)`.
pub fn reward4(da_abs: f64, db_abs: f64, dmu_abs: f64) -> f64 {
    3.0 - sigmoid(da_abs) - sigmoid(db_abs) - sigmoid(dmu_abs)
}

/// Area over perimeter of the aperture, zero when fully closed.
pub fn reward5(pairs: &[LeafPair]) -> f64 {
    let (area, perimeter) = aperture_area_perimeter(pairs);
    if perimeter > 0.0 {
        area / perimeter
    } else {
        0.0
    }
}

pub fn total_reward(parts: [f64; 5], weights: &RewardWeights) -> RewardBreakdown {
    let total = parts.iter().zip(weights.0.iter()).map(|(r, w)| r * w).sum();
    RewardBreakdown { parts, total }
}
