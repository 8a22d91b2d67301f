//! Finite-horizon MLC environment.
//!
//! One episode sequences `K` control points for a single target grid. At each
//! control point every leaf pair moves by a bounded integer step, then a single
//! monitor unit is chosen for the whole aperture and the aperture's fluence is
//! added to the cumulated fluence.

use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, LeafPair, MachineState, PlanSequence};
use crate::normalize::resample_row;
use crate::rewards::{
    reward1, reward1_literal, reward2, reward2_literal, reward3, reward4, reward5, total_reward,
    ApertureScope, RewardBreakdown, RewardConfig, RewardVariant,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Control points per episode (K).
    pub control_points: usize,
    /// Maximum leaf step per control point (S).
    pub max_step: i64,
    /// Monitor-unit range `(R_b, R_e)`.
    pub mu_range: (f64, f64),
    /// Column count of the per-row observation profiles.
    pub y_norm: usize,
    pub rewards: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_points: 8,
            max_step: 4,
            mu_range: (0.5, 2.5),
            y_norm: 64,
            rewards: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mu_range;
        if self.control_points < 1 {
            return Err(Error::Config("control_points must be >= 1".into()));
        }
        if self.max_step < 1 {
            return Err(Error::Config("max_step must be >= 1".into()));
        }
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid MU range ({lo}, {hi})")));
        }
        if self.y_norm < 8 {
            return Err(Error::Config("y_norm must be >= 8".into()));
        }
        if !self.rewards.weights.is_valid() {
            return Err(Error::Config("reward weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Number of discrete options per leaf (`2S + 1`).
    pub fn leaf_bins(&self) -> usize {
        (2 * self.max_step + 1) as usize
    }

    pub fn leaf_obs_dim(&self) -> usize {
        3 * self.y_norm + 4
    }

    pub fn mu_obs_dim(&self) -> usize {
        2 * self.y_norm + 2
    }

    /// Intensities enter network inputs in units of the largest single-CP MU.
    pub fn intensity_scale(&self) -> f64 {
        1.0 / self.mu_range.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafAction {
    pub da: i64,
    pub db: i64,
}

impl LeafAction {
    pub const fn new(da: i64, db: i64) -> Self {
        Self { da, db }
    }

    pub const STAY: LeafAction = LeafAction::new(0, 0);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuAction(pub f64);

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub target: FluenceGrid,
    pub cumulated: FluenceGrid,
    pub machine: MachineState,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafObservation {
    pub target_row: Vec<f64>,
    pub cumulated_row: Vec<f64>,
    /// Signed `target - cumulated`; negative cells are overdosed.
    pub residual_row: Vec<f64>,
    pub a_frac: f64,
    pub b_frac: f64,
    pub k_frac: f64,
    pub x_frac: f64,
}

impl LeafObservation {
    pub fn write_features(&self, scale: f64, out: &mut Vec<f64>) {
        out.extend(self.target_row.iter().map(|v| v * scale));
        out.extend(self.cumulated_row.iter().map(|v| v * scale));
        out.extend(self.residual_row.iter().map(|v| v * scale));
        out.extend([self.a_frac, self.b_frac, self.k_frac, self.x_frac]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuObservation {
    /// Row mean of the residual seen through the new aperture.
    pub pooled_residual: Vec<f64>,
    pub pooled_mask: Vec<f64>,
    pub open_fraction: f64,
    pub k_frac: f64,
}

impl MuObservation {
    pub fn write_features(&self, scale: f64, out: &mut Vec<f64>) {
        out.extend(self.pooled_residual.iter().map(|v| v * scale));
        out.extend(self.pooled_mask.iter().copied());
        out.extend([self.open_fraction, self.k_frac]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// One breakdown per leaf pair.
    pub rewards: Vec<RewardBreakdown>,
    pub done: bool,
}

/// Clamps both leaves into `[0, cols]` and collapses crossed pairs to their
/// floored midpoint.
pub fn enforce(pair: LeafPair, cols: usize) -> LeafPair {
    let y = cols as i64;
    let a = pair.a.clamp(0, y);
    let b = pair.b.clamp(0, y);
    if a > b {
        let mid = (a + b).div_euclid(2);
        LeafPair::new(mid, mid)
    } else {
        LeafPair::new(a, b)
    }
}

/// Linear resampling of one row to `n` columns (identity when lengths match).
fn profile(row: &[f64], n: usize) -> Vec<f64> {
    if row.len() == n {
        row.to_vec()
    } else {
        resample_row(row, n)
    }
}

fn signed_profile(row: &[f64], n: usize) -> Vec<f64> {
    if row.len() == n {
        return row.to_vec();
    }
    // resample_row clamps at zero; split into positive and negative parts
    let pos: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
    let neg: Vec<f64> = row.iter().map(|v| (-v).max(0.0)).collect();
    resample_row(&pos, n)
        .into_iter()
        .zip(resample_row(&neg, n))
        .map(|(p, q)| p - q)
        .collect()
}

#[derive(Debug, Clone)]
pub struct MlcEnv {
    cfg: EnvConfig,
    state: EnvState,
    history: Vec<MachineState>,
}

impl MlcEnv {
    /// Starts an episode with every leaf pair conformal to its row's positive
    /// support. All-zero rows start closed at the row midpoint.
    pub fn reset(target: FluenceGrid, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if !target.has_positive() {
            return Err(Error::EmptyTarget);
        }
        let (rows, cols) = target.shape();
        let pairs = (0..rows)
            .map(|x| {
                let row = target.row(x);
                match (row.iter().position(|&v| v > 0.0), row.iter().rposition(|&v| v > 0.0)) {
                    (Some(first), Some(last)) => LeafPair::new(first as i64, last as i64 + 1),
                    _ => {
                        let mid = (cols / 2) as i64;
                        LeafPair::new(mid, mid)
                    }
                }
            })
            .collect();
        let machine = MachineState::new(pairs, cfg.mu_range.0);
        Ok(Self {
            state: EnvState {
                cumulated: FluenceGrid::zeros(rows, cols),
                target,
                machine,
                k: 0,
            },
            history: Vec::with_capacity(cfg.control_points),
            cfg,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn rows(&self) -> usize {
        self.state.target.rows()
    }

    pub fn cols(&self) -> usize {
        self.state.target.cols()
    }

    pub fn is_done(&self) -> bool {
        self.state.k >= self.cfg.control_points
    }

    fn check_actions(&self, actions: &[LeafAction]) -> Result<()> {
        if actions.len() != self.rows() {
            return Err(Error::contract(format!(
                "expected {} leaf actions, got {}",
                self.rows(),
                actions.len()
            )));
        }
        let s = self.cfg.max_step;
        if let Some(bad) = actions.iter().find(|act| act.da.abs() > s || act.db.abs() > s) {
            return Err(Error::contract(format!(
                "leaf action ({}, {}) exceeds max step {s}",
                bad.da, bad.db
            )));
        }
        Ok(())
    }

    fn intended(&self, actions: &[LeafAction]) -> Vec<LeafPair> {
        self.state
            .machine
            .pairs
            .iter()
            .zip(actions)
            .map(|(p, act)| LeafPair::new(p.a + act.da, p.b + act.db))
            .collect()
    }

    /// Enforced leaf positions that `actions` would produce, without stepping.
    pub fn preview_pairs(&self, actions: &[LeafAction]) -> Result<Vec<LeafPair>> {
        self.check_actions(actions)?;
        let cols = self.cols();
        Ok(self.intended(actions).into_iter().map(|p| enforce(p, cols)).collect())
    }

    pub fn step(&mut self, actions: &[LeafAction], mu_action: MuAction) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::contract("step called on a finished episode"));
        }
        self.check_actions(actions)?;
        if !mu_action.0.is_finite() {
            return Err(Error::NonFinite("MU action".into()));
        }
        let cols = self.cols();
        let intended = self.intended(actions);
        let pairs: Vec<LeafPair> = intended.iter().map(|p| enforce(*p, cols)).collect();
        let (lo, hi) = self.cfg.mu_range;
        let mu = mu_action.0.clamp(lo, hi);
        let rc = self.cfg.rewards;
        let full_r5 = reward5(&pairs);

        let prev = &self.state.machine;
        let mut rewards = Vec::with_capacity(pairs.len());
        let mut mask = vec![0.0; cols];
        let mut cumu_new = vec![0.0; cols];
        for (x, pair) in pairs.iter().enumerate() {
            mask.fill(0.0);
            mask[pair.a as usize..pair.b as usize].fill(1.0);
            let target = self.state.target.row(x);
            let cumu_prev = self.state.cumulated.row(x);
            for ((c, &p), &m) in cumu_new.iter_mut().zip(cumu_prev).zip(&mask) {
                *c = p + mu * m;
            }
            let (r1, r2) = match rc.variant {
                RewardVariant::Pseudocode => (
                    reward1(target, cumu_prev, &mask, mu),
                    reward2(target, &cumu_new, &mask),
                ),
                RewardVariant::Literal => (
                    reward1_literal(target, cumu_prev, &mask, mu),
                    reward2_literal(target, &cumu_new, mu),
                ),
            };
            let old = prev.pairs[x];
            let r4 = reward4(
                (pair.a - old.a).abs() as f64,
                (pair.b - old.b).abs() as f64,
                (mu - prev.mu).abs(),
            );
            let r5 = match rc.aperture {
                ApertureScope::Full => full_r5,
                ApertureScope::PerPair => reward5(std::slice::from_ref(pair)),
            };
            rewards.push(total_reward([r1, r2, reward3(intended[x]), r4, r5], &rc.weights));
        }

        let machine = MachineState::new(pairs, mu);
        self.state.cumulated = crate::fluence::accumulate(&self.state.cumulated, &machine)?;
        self.history.push(machine.clone());
        self.state.machine = machine;
        self.state.k += 1;
        Ok(StepOutcome {
            rewards,
            done: self.is_done(),
        })
    }

    pub fn observe_leaf(&self, x: usize) -> LeafObservation {
        let n = self.cfg.y_norm;
        let s = &self.state;
        let cols = self.cols() as f64;
        let target = s.target.row(x);
        let cumu = s.cumulated.row(x);
        let residual: Vec<f64> = target.iter().zip(cumu).map(|(t, c)| t - c).collect();
        let pair = s.machine.pairs[x];
        LeafObservation {
            target_row: profile(target, n),
            cumulated_row: profile(cumu, n),
            residual_row: signed_profile(&residual, n),
            a_frac: pair.a as f64 / cols,
            b_frac: pair.b as f64 / cols,
            k_frac: s.k as f64 / self.cfg.control_points as f64,
            x_frac: x as f64 / self.rows() as f64,
        }
    }

    pub fn observe_mu(&self, post_leaf_pairs: &[LeafPair]) -> MuObservation {
        let n = self.cfg.y_norm;
        let s = &self.state;
        let (rows, cols) = s.target.shape();
        let mut residual = vec![0.0; cols];
        let mut mask = vec![0.0; cols];
        let mut open = 0i64;
        for (x, pair) in post_leaf_pairs.iter().enumerate() {
            open += pair.width();
            let target = s.target.row(x);
            let cumu = s.cumulated.row(x);
            for y in pair.a as usize..pair.b as usize {
                residual[y] += target[y] - cumu[y];
                mask[y] += 1.0;
            }
        }
        let inv = 1.0 / rows as f64;
        residual.iter_mut().for_each(|v| *v *= inv);
        mask.iter_mut().for_each(|v| *v *= inv);
        MuObservation {
            pooled_residual: signed_profile(&residual, n),
            pooled_mask: profile(&mask, n),
            open_fraction: open as f64 / (rows * cols) as f64,
            k_frac: s.k as f64 / self.cfg.control_points as f64,
        }
    }

    /// Control points delivered so far.
    pub fn history(&self) -> &[MachineState] {
        &self.history
    }

    pub fn plan(&self) -> Result<PlanSequence> {
        PlanSequence::new(self.history.clone(), self.state.target.shape())
    }
}
