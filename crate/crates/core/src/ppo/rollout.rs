//! Episode rollouts and the advantage buffer.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policy::PolicyParams;
use crate::env::{LeafAction, MlcEnv, MuAction};
use crate::error::{Error, Result};
use crate::nn::dist::{argmax, categorical_logprob_entropy, gaussian_logprob_entropy, sample_categorical, sample_gaussian};

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy.
    Sample,
    /// Argmax leaf steps and the Gaussian mean for MU.
    Greedy,
    /// Uniform leaf steps and uniform MU in range; ignores the networks.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub leaf_obs: Vec<f64>,
    pub mu_obs: Vec<f64>,
    /// Bin indices of the two leaf steps; the step is `index − S`.
    pub da: usize,
    pub db: usize,
    /// Unclamped MU sample.
    pub mu_action: f64,
    pub leaf_logprob: f64,
    pub mu_logprob: f64,
    /// Scaled total reward of this leaf pair.
    pub reward: f64,
    /// Unscaled reward components.
    pub parts: [f64; 5],
    pub value: f64,
    pub done: bool,
    pub episode: usize,
    pub x: usize,
    pub k: usize,
}

/// Layout of one episode inside the flat buffer: transitions are stored
/// control point by control point, `rows` per control point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub start: usize,
    pub rows: usize,
    pub steps: usize,
}

impl EpisodeSpan {
    pub fn index(&self, x: usize, k: usize) -> usize {
        self.start + k * self.rows + x
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSpan>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Fills `advantages` and `returns` from per-leaf-pair trajectories.
    /// `td0` replaces the returns by one-step targets.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64, td0: bool) {
        let n = self.transitions.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        for span in &self.episodes {
            for x in 0..span.rows {
                let idx: Vec<usize> = (0..span.steps).map(|k| span.index(x, k)).collect();
                let rewards: Vec<f64> = idx.iter().map(|&i| self.transitions[i].reward).collect();
                let values: Vec<f64> = idx.iter().map(|&i| self.transitions[i].value).collect();
                let dones: Vec<bool> = idx.iter().map(|&i| self.transitions[i].done).collect();
                let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda);
                for (j, &i) in idx.iter().enumerate() {
                    self.advantages[i] = adv[j];
                    self.returns[i] = if td0 {
                        let next = if dones[j] || j + 1 == idx.len() { 0.0 } else { values[j + 1] };
                        rewards[j] + gamma * next
                    } else {
                        ret[j]
                    };
                }
            }
        }
    }
}

/// GAE over one trajectory. A `done` step does not bootstrap, and neither
/// does the final step.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] || t + 1 == n { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Result of driving one environment to completion.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub env: MlcEnv,
}

/// Runs `env` to the end of its episode.
pub fn run_episode<R: Rng + ?Sized>(
    params: &PolicyParams,
    mut env: MlcEnv,
    mode: ActionMode,
    reward_scale: f64,
    episode: usize,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let cfg = env.config().clone();
    let scale = cfg.intensity_scale();
    let bins = params.bins;
    if bins != cfg.leaf_bins() {
        return Err(Error::contract("policy and environment disagree on the leaf step range"));
    }
    let s = cfg.max_step;
    let rows = env.rows();
    let leaf_dim = cfg.leaf_obs_dim();
    let (mu_lo, mu_hi) = cfg.mu_range;
    let mut transitions = Vec::with_capacity(rows * cfg.control_points);
    let mut feats = Vec::with_capacity(leaf_dim);

    while !env.is_done() {
        let k = env.state().k;
        let mut leaf_obs = Array2::zeros((rows, leaf_dim));
        for x in 0..rows {
            feats.clear();
            env.observe_leaf(x).write_features(scale, &mut feats);
            leaf_obs.row_mut(x).assign(&ndarray::ArrayView1::from(&feats[..]));
        }
        let (logits, values) = if mode == ActionMode::Random {
            (None, vec![0.0; rows])
        } else {
            (Some(params.leaf.predict(leaf_obs.view())?), params.values(leaf_obs.view())?)
        };

        let mut picks = Vec::with_capacity(rows);
        for x in 0..rows {
            let (da, db, lp) = match &logits {
                None => {
                    let lp = -2.0 * (bins as f64).ln();
                    (rng.random_range(0..bins), rng.random_range(0..bins), lp)
                }
                Some(out) => {
                    let row = out.row(x);
                    let row = row.as_slice().expect("contiguous");
                    let (la, lb) = (&row[..bins], &row[bins..2 * bins]);
                    let (da, db) = match mode {
                        ActionMode::Greedy => (argmax(la), argmax(lb)),
                        _ => (sample_categorical(la, rng), sample_categorical(lb, rng)),
                    };
                    let lp = categorical_logprob_entropy(la, da).logprob + categorical_logprob_entropy(lb, db).logprob;
                    (da, db, lp)
                }
            };
            picks.push((da, db, lp));
        }
        let actions: Vec<LeafAction> = picks
            .iter()
            .map(|&(da, db, _)| LeafAction::new(da as i64 - s, db as i64 - s))
            .collect();

        let post = env.preview_pairs(&actions)?;
        let mut mu_obs = Vec::with_capacity(cfg.mu_obs_dim());
        env.observe_mu(&post).write_features(scale, &mut mu_obs);
        let (mu_action, mu_logprob) = match mode {
            ActionMode::Random => (rng.random_range(mu_lo..=mu_hi), -(mu_hi - mu_lo).ln()),
            _ => {
                let mean = params.mu.forward(&mu_obs)?.0[0];
                let log_std = params.log_std();
                let a = if mode == ActionMode::Greedy { mean } else { sample_gaussian(mean, log_std, rng) };
                (a, gaussian_logprob_entropy(mean, log_std, a).logprob)
            }
        };
        if !mu_action.is_finite() {
            return Err(Error::NonFinite("MU policy output".into()));
        }

        let outcome = env.step(&actions, MuAction(mu_action))?;
        for (x, ((da, db, lp), r)) in picks.into_iter().zip(&outcome.rewards).enumerate() {
            transitions.push(Transition {
                leaf_obs: leaf_obs.row(x).to_vec(),
                mu_obs: mu_obs.clone(),
                da,
                db,
                mu_action,
                leaf_logprob: lp,
                mu_logprob,
                reward: r.total * reward_scale,
                parts: r.parts,
                value: values[x],
                done: outcome.done,
                episode,
                x,
                k,
            });
        }
    }
    Ok(EpisodeRecord { transitions, env })
}

/// Per-episode RNG derived from a base seed and the episode's global index.
pub fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs every environment to completion in parallel and assembles the buffer
/// in environment order. Episode `i` draws from `episode_rng(seed, i)`, so the
/// result does not depend on scheduling.
pub fn collect_rollouts(
    params: &PolicyParams,
    envs: Vec<MlcEnv>,
    mode: ActionMode,
    reward_scale: f64,
    seed: u64,
) -> Result<(RolloutBuffer, Vec<MlcEnv>)> {
    if !params.is_finite() {
        return Err(Error::NonFinite("policy parameters".into()));
    }
    let records: Vec<EpisodeRecord> = envs
        .into_par_iter()
        .enumerate()
        .map(|(i, env)| {
            let mut rng = episode_rng(seed, i as u64);
            run_episode(params, env, mode, reward_scale, i, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut buffer = RolloutBuffer::default();
    let mut finished = Vec::with_capacity(records.len());
    for rec in records {
        buffer.episodes.push(EpisodeSpan {
            start: buffer.transitions.len(),
            rows: rec.env.rows(),
            steps: rec.env.config().control_points,
        });
        buffer.transitions.extend(rec.transitions);
        finished.push(rec.env);
    }
    Ok((buffer, finished))
}
