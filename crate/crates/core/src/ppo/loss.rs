//! Clipped surrogate, clipped value loss and their gradients on a minibatch.

use ndarray::Array2;

use super::config::TrainConfig;
use super::policy::{PolicyGrad, PolicyParams};
use super::rollout::Transition;
use crate::error::{Error, Result};
use crate::nn::dist::{categorical_logprob_entropy, gaussian_logprob_entropy};

/// Joint ratio of the leaf and MU action probabilities.
pub fn probability_ratio(new_leaf_lp: f64, new_mu_lp: f64, old_leaf_lp: f64, old_mu_lp: f64) -> f64 {
    ((new_leaf_lp + new_mu_lp) - (old_leaf_lp + old_mu_lp)).exp()
}

/// `−min(r·Â, clip(r)·Â)` and its derivative with respect to `ln r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (-unclipped, -unclipped)
    } else {
        // the clipped branch is flat in r wherever it is strictly smaller
        (-clipped, 0.0)
    }
}

/// `½·max((V − R)², (V_old + clip(V − V_old, ±ε) − R)²)` and its derivative in `V`.
pub fn clipped_value_loss(value: f64, old_value: f64, ret: f64, clip: f64) -> (f64, f64) {
    let unclipped = (value - ret).powi(2);
    let v_clip = old_value + (value - old_value).clamp(-clip, clip);
    let clipped = (v_clip - ret).powi(2);
    if unclipped >= clipped {
        (0.5 * unclipped, value - ret)
    } else {
        let inside = (value - old_value).abs() < clip;
        (0.5 * clipped, if inside { v_clip - ret } else { 0.0 })
    }
}

/// Shifts and scales to mean 0 and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    /// Surrogate minus the entropy bonus.
    pub policy_loss: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub leaf_entropy: f64,
    pub mu_entropy: f64,
    /// `policy_loss + vf_coef · value_loss`.
    pub total: f64,
    pub ratios: Vec<f64>,
    pub clip_fraction: f64,
    pub grad: PolicyGrad,
}

fn stack(rows: impl Iterator<Item = impl AsRef<[f64]>>, dim: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(Error::contract(format!("observation of length {} where {dim} expected", r.len())));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, dim), data).expect("shape checked"))
}

/// Loss and gradients of one minibatch. `advantages` must already be
/// normalized; `returns` are the value targets.
pub fn evaluate_batch(
    params: &PolicyParams,
    batch: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
) -> Result<BatchEval> {
    let n = batch.len();
    if n == 0 || advantages.len() != n || returns.len() != n {
        return Err(Error::contract("minibatch, advantages and returns must be nonempty and aligned"));
    }
    let bins = params.bins;
    let inv = 1.0 / n as f64;
    let leaf_x = stack(batch.iter().map(|t| &t.leaf_obs), params.leaf.input_dim())?;
    let mu_x = stack(batch.iter().map(|t| &t.mu_obs), params.mu.input_dim())?;
    let (leaf_out, leaf_tape) = params.leaf.forward_batch(leaf_x.view())?;
    let (mu_out, mu_tape) = params.mu.forward_batch(mu_x.view())?;
    let critic_pass = params
        .critic
        .as_ref()
        .map(|c| c.forward_batch(leaf_x.view()))
        .transpose()?;
    let log_std = params.log_std();

    let mut g_leaf = Array2::zeros(leaf_out.raw_dim());
    let mut g_mu = Array2::zeros(mu_out.raw_dim());
    let mut g_critic = critic_pass.as_ref().map(|(out, _)| Array2::zeros(out.raw_dim()));
    let mut g_log_std = 0.0;
    let (mut surrogate, mut value_loss, mut leaf_entropy, mut mu_entropy) = (0.0, 0.0, 0.0, 0.0);
    let mut ratios = Vec::with_capacity(n);
    let mut clipped = 0usize;

    for (i, t) in batch.iter().enumerate() {
        let row = leaf_out.row(i);
        let row = row.as_slice().expect("contiguous");
        let ea = categorical_logprob_entropy(&row[..bins], t.da);
        let eb = categorical_logprob_entropy(&row[bins..2 * bins], t.db);
        let em = gaussian_logprob_entropy(mu_out[[i, 0]], log_std, t.mu_action);
        let ratio = probability_ratio(ea.logprob + eb.logprob, em.logprob, t.leaf_logprob, t.mu_logprob);
        let (l, dl) = clipped_surrogate(ratio, advantages[i], cfg.clip);
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        ratios.push(ratio);
        surrogate += l * inv;
        leaf_entropy += (ea.entropy + eb.entropy) * inv;
        mu_entropy += em.entropy * inv;

        let g = dl * inv;
        let c = cfg.ent_coef * inv;
        for j in 0..bins {
            g_leaf[[i, j]] = g * ea.dlogprob[j] - c * ea.dentropy[j];
            g_leaf[[i, bins + j]] = g * eb.dlogprob[j] - c * eb.dentropy[j];
        }
        g_mu[[i, 0]] = g * em.dlogprob_dmean;
        g_log_std += g * em.dlogprob_dlog_std - c * em.dentropy_dlog_std;

        let value = match &critic_pass {
            Some((out, _)) => out[[i, 0]],
            None => row[2 * bins],
        };
        let (vl, dv) = clipped_value_loss(value, t.value, returns[i], cfg.clip);
        value_loss += vl * inv;
        let gv = cfg.vf_coef * dv * inv;
        match &mut g_critic {
            Some(gc) => gc[[i, 0]] = gv,
            None => g_leaf[[i, 2 * bins]] = gv,
        }
    }

    let policy_loss = surrogate - cfg.ent_coef * (leaf_entropy + mu_entropy);
    let total = policy_loss + cfg.vf_coef * value_loss;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (policy {policy_loss}, value {value_loss})"
        )));
    }

    let (leaf_grad, _) = params.leaf.backward(&leaf_tape, g_leaf.view())?;
    let (mu_grad, _) = params.mu.backward(&mu_tape, g_mu.view())?;
    let critic_grad = match (&params.critic, &critic_pass, &g_critic) {
        (Some(c), Some((_, tape)), Some(g)) => Some(c.backward(tape, g.view())?.0),
        _ => None,
    };
    let grad = PolicyGrad {
        leaf: leaf_grad,
        mu: mu_grad,
        mu_log_std: if params.log_std_active() { g_log_std } else { 0.0 },
        critic: critic_grad,
    };
    Ok(BatchEval {
        policy_loss,
        surrogate,
        value_loss,
        leaf_entropy,
        mu_entropy,
        total,
        ratios,
        clip_fraction: clipped as f64 * inv,
        grad,
    })
}
