//! Inference: crop, roll out, map back, merge and refine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::PolicyParams;
use super::rollout::{run_episode, ActionMode};
use crate::env::{EnvConfig, MlcEnv};
use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, MachineState, PlanSequence};
use crate::normalize::{crop_and_resize, detect_roi, make_crop, map_positions_back, merge_control_points, CropMode};
use crate::refine::{ridge_refine, RidgeConfig};

fn pipeline<R: Rng + ?Sized>(
    target: &FluenceGrid,
    params: &PolicyParams,
    env_cfg: &EnvConfig,
    k_target: usize,
    mode: ActionMode,
    alpha: f64,
    rng: &mut R,
) -> Result<PlanSequence> {
    let roi = detect_roi(target)?;
    let crop = make_crop(roi, target.shape(), CropMode::Inference, rng);
    let normalized = crop_and_resize(target, &crop, env_cfg.y_norm)?;
    let env = MlcEnv::reset(normalized, env_cfg.clone())?;
    let episode = run_episode(params, env, mode, 1.0, 0, rng)?;
    let history = episode.env.history();
    let positions: Vec<_> = history.iter().map(|m| m.pairs.clone()).collect();
    let mapped = map_positions_back(&positions, &crop, env_cfg.y_norm)?;
    let states = mapped
        .into_iter()
        .zip(history)
        .map(|(pairs, m)| MachineState::new(pairs, m.mu))
        .collect();
    let mut plan = PlanSequence::new(states, target.shape())?;
    plan.crop_record = Some(crop);
    if k_target != plan.len() {
        plan = merge_control_points(&plan, k_target)?;
    }
    let ridge = RidgeConfig {
        alpha,
        max_mu: env_cfg.mu_range.1,
    };
    let mut refined = ridge_refine(target, &plan, &ridge)?;
    refined.crop_record = Some(crop);
    Ok(refined)
}

/// Deterministic sequencing with the trained policy: argmax leaf steps and
/// the Gaussian mean for MU.
pub fn sequence(target: &FluenceGrid, params: &PolicyParams, env_cfg: &EnvConfig, k_target: usize) -> Result<PlanSequence> {
    sequence_with_alpha(target, params, env_cfg, k_target, RidgeConfig::default().alpha)
}

pub fn sequence_with_alpha(
    target: &FluenceGrid,
    params: &PolicyParams,
    env_cfg: &EnvConfig,
    k_target: usize,
    alpha: f64,
) -> Result<PlanSequence> {
    if params.bins != env_cfg.leaf_bins() {
        return Err(Error::contract("policy and environment disagree on the leaf step range"));
    }
    // greedy rollouts and inference crops never draw from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    pipeline(target, params, env_cfg, k_target, ActionMode::Greedy, alpha, &mut rng)
}

/// The same pipeline driven by uniformly random actions.
pub fn random_sequence<R: Rng + ?Sized>(
    target: &FluenceGrid,
    params: &PolicyParams,
    env_cfg: &EnvConfig,
    k_target: usize,
    rng: &mut R,
) -> Result<PlanSequence> {
    pipeline(target, params, env_cfg, k_target, ActionMode::Random, RidgeConfig::default().alpha, rng)
}
