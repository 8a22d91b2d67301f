//! The PPO update loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{TrainConfig, ValueTarget};
use super::loss::{evaluate_batch, normalize_advantages};
use super::policy::PolicyParams;
use super::rollout::{collect_rollouts, ActionMode, RolloutBuffer};
use super::sequence::sequence;
use crate::env::{EnvConfig, MlcEnv};
use crate::error::{Error, Result};
use crate::fluence::FluenceGrid;
use crate::metrics::{mnse, reconstruct};
use crate::nn::{clip_grad_norm, AdamW, CosineSchedule};
use crate::normalize::{crop_and_resize, detect_roi, make_crop, CropMode};

pub const METRICS_HEADER: &str = "iter,mean_reward,r1,r2,r3,r4,r5,policy_loss,value_loss,entropy,lr,probe_mnse";

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Mean unscaled return per leaf pair and episode.
    pub mean_reward: f64,
    /// Mean unscaled reward components per transition.
    pub components: [f64; 5],
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    pub probe_mnse: f64,
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        let c = &self.components;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.mean_reward,
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.lr,
            self.probe_mnse
        )
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[IterationMetrics]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters after the last completed iteration.
    pub params: PolicyParams,
    pub metrics: Vec<IterationMetrics>,
    /// Diagnostic when training stopped on a non-finite value.
    pub aborted: Option<String>,
}

/// Mean MNSE of the greedy pipeline over `probe`.
pub fn probe_mnse(params: &PolicyParams, env_cfg: &EnvConfig, probe: &[FluenceGrid]) -> Result<f64> {
    let recon = probe
        .iter()
        .map(|f| reconstruct(&sequence(f, params, env_cfg, env_cfg.control_points)?))
        .collect::<Result<Vec<_>>>()?;
    mnse(probe.iter().zip(&recon))
}

fn make_envs<R: Rng + ?Sized>(corpus: &[FluenceGrid], env_cfg: &EnvConfig, n: usize, rng: &mut R) -> Result<Vec<MlcEnv>> {
    (0..n)
        .map(|_| {
            let target = &corpus[rng.random_range(0..corpus.len())];
            let roi = detect_roi(target)?;
            let crop = make_crop(roi, target.shape(), CropMode::Train, rng);
            MlcEnv::reset(crop_and_resize(target, &crop, env_cfg.y_norm)?, env_cfg.clone())
        })
        .collect()
}

#[derive(Default)]
struct Running {
    policy: f64,
    value: f64,
    entropy: f64,
    count: usize,
}

enum UpdateError {
    NonFinite(String),
    Other(Error),
}

fn update(
    params: &mut PolicyParams,
    opt: &mut AdamW,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
    stats: &mut Running,
) -> std::result::Result<(), UpdateError> {
    let n = buffer.len();
    let mb = n.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let batch: Vec<_> = chunk.iter().map(|&i| &buffer.transitions[i]).collect();
            let mut adv: Vec<f64> = chunk.iter().map(|&i| buffer.advantages[i]).collect();
            normalize_advantages(&mut adv);
            let ret: Vec<f64> = chunk.iter().map(|&i| buffer.returns[i]).collect();
            let eval = match evaluate_batch(params, &batch, &adv, &ret, cfg) {
                Ok(e) => e,
                Err(Error::NonFinite(m)) => return Err(UpdateError::NonFinite(m)),
                Err(e) => return Err(UpdateError::Other(e)),
            };
            let mut grad = eval.grad;
            clip_grad_norm(&mut grad.slices_mut(), cfg.max_grad_norm);
            match opt.step(&mut params.param_slices_mut(), &grad.slices(), lr) {
                Ok(()) => {}
                Err(Error::NonFinite(m)) => return Err(UpdateError::NonFinite(m)),
                Err(e) => return Err(UpdateError::Other(e)),
            }
            stats.policy += eval.policy_loss;
            stats.value += eval.value_loss;
            stats.entropy += eval.leaf_entropy + eval.mu_entropy;
            stats.count += 1;
        }
    }
    if !params.is_finite() {
        return Err(UpdateError::NonFinite("parameters after update".into()));
    }
    Ok(())
}

/// Trains from a seeded initialization. `probe` targets are sequenced after
/// every iteration for the `probe_mnse` column; `on_iter` sees each row as it
/// is produced.
pub fn train(
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    corpus: &[FluenceGrid],
    probe: &[FluenceGrid],
    mut on_iter: impl FnMut(&IterationMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    env_cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = PolicyParams::init(env_cfg, cfg.shared_backbone, &mut init_rng);
    train_from(cfg, env_cfg, corpus, probe, init, &mut on_iter)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from(
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    corpus: &[FluenceGrid],
    probe: &[FluenceGrid],
    init: PolicyParams,
    on_iter: &mut dyn FnMut(&IterationMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut params = init;
    let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    let mut opt = AdamW::new(&shapes, cfg.weight_decay);
    let schedule = CosineSchedule {
        base_lr: cfg.lr,
        horizon: cfg.iterations,
    };
    let mut metrics = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let iter_seed = cfg.seed ^ (iter as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
        let envs = make_envs(corpus, env_cfg, cfg.episodes_per_iter, &mut rng)?;
        let (mut buffer, _) = match collect_rollouts(&params, envs, ActionMode::Sample, cfg.reward_scale, iter_seed) {
            Ok(b) => b,
            Err(Error::NonFinite(m)) => {
                return Ok(TrainReport {
                    params,
                    metrics,
                    aborted: Some(format!("iteration {iter}: non-finite {m}")),
                })
            }
            Err(e) => return Err(e),
        };
        buffer.compute_advantages(cfg.gamma, cfg.gae_lambda, cfg.value_target == ValueTarget::Td0);

        let lr = schedule.lr_at(iter);
        let last_good = params.clone();
        let mut stats = Running::default();
        match update(&mut params, &mut opt, &buffer, cfg, lr, &mut rng, &mut stats) {
            Ok(()) => {}
            Err(UpdateError::NonFinite(m)) => {
                log::warn!("iteration {iter}: non-finite {m}; stopping with last good parameters");
                return Ok(TrainReport {
                    params: last_good,
                    metrics,
                    aborted: Some(format!("iteration {iter}: non-finite {m}")),
                });
            }
            Err(UpdateError::Other(e)) => return Err(e),
        }

        let n = buffer.len() as f64;
        let mut components = [0.0; 5];
        let mut total = 0.0;
        for t in &buffer.transitions {
            for (c, p) in components.iter_mut().zip(t.parts) {
                *c += p / n;
            }
            total += t.reward / cfg.reward_scale;
        }
        let trajectories: usize = buffer.episodes.iter().map(|e| e.rows).sum();
        let count = stats.count.max(1) as f64;
        let row = IterationMetrics {
            iter,
            mean_reward: total / trajectories as f64,
            components,
            policy_loss: stats.policy / count,
            value_loss: stats.value / count,
            entropy: stats.entropy / count,
            lr,
            probe_mnse: if probe.is_empty() { f64::NAN } else { probe_mnse(&params, env_cfg, probe)? },
        };
        log::info!(
            "iter {iter}: reward {:.3} probe_mnse {:.4} lr {:.2e}",
            row.mean_reward,
            row.probe_mnse,
            lr
        );
        on_iter(&row);
        metrics.push(row);
    }
    Ok(TrainReport {
        params,
        metrics,
        aborted: None,
    })
}
