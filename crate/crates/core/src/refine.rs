//! Ridge refinement of monitor units for a fixed sequence of apertures.
//!
//! With `G` the matrix whose columns are the flattened aperture masks, solves
//! `(GᵀG + αI) m = GᵀF` by Cholesky and clips the result to `[0, max_mu]`.

use log::warn;

use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, PlanSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub alpha: f64,
    /// Upper clip for refined MUs (`R_e`). The lower clip is 0.
    pub max_mu: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            max_mu: 2.5,
        }
    }
}

const SINGULAR_FALLBACK_ALPHA: f64 = 1e-8;

/// Normal equations `(GᵀG + αI, GᵀF)` of the plan's apertures, computed from
/// interval overlaps rather than the dense mask matrix.
pub fn normal_equations(target: &FluenceGrid, plan: &PlanSequence, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if target.shape() != plan.grid_shape {
        return Err(Error::contract("plan and target shapes differ"));
    }
    let k = plan.len();
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    // prefix sums make GᵀF an O(1) lookup per pair
    let prefix: Vec<Vec<f64>> = (0..target.rows())
        .map(|x| {
            let mut acc = vec![0.0; target.cols() + 1];
            for (y, v) in target.row(x).iter().enumerate() {
                acc[y + 1] = acc[y] + v;
            }
            acc
        })
        .collect();
    for i in 0..k {
        let si = &plan.states[i];
        rhs[i] = si
            .pairs
            .iter()
            .enumerate()
            .map(|(x, p)| if p.is_open() { prefix[x][p.b as usize] - prefix[x][p.a as usize] } else { 0.0 })
            .sum();
        for j in i..k {
            let sj = &plan.states[j];
            let overlap: i64 = si
                .pairs
                .iter()
                .zip(&sj.pairs)
                .map(|(p, q)| (p.b.min(q.b) - p.a.max(q.a)).max(0))
                .sum();
            gram[i * k + j] = overlap as f64;
            gram[j * k + i] = overlap as f64;
        }
        gram[i * k + i] += alpha;
    }
    Ok((gram, rhs))
}

/// Cholesky factorisation in place (lower triangle). `None` if the matrix is
/// not numerically positive definite.
fn cholesky(mut a: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 1e-12 * a[j * n + j].abs().max(1.0)) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for p in 0..i {
            y[i] -= l[i * n + p] * y[p];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            y[i] -= l[p * n + i] * y[p];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Solves the ridge system without clipping. Falls back to a tiny `α` when the
/// unregularised system is singular.
pub fn solve_ridge(target: &FluenceGrid, plan: &PlanSequence, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    let k = plan.len();
    let (gram, rhs) = normal_equations(target, plan, alpha)?;
    if let Some(l) = cholesky(gram, k) {
        return Ok(cholesky_solve(&l, k, &rhs));
    }
    if alpha > 0.0 {
        return Err(Error::NonFinite("ridge normal equations".into()));
    }
    warn!("singular MU refinement system, retrying with alpha = {SINGULAR_FALLBACK_ALPHA}");
    let (gram, rhs) = normal_equations(target, plan, SINGULAR_FALLBACK_ALPHA)?;
    let l = cholesky(gram, k).ok_or_else(|| Error::NonFinite("ridge normal equations".into()))?;
    Ok(cholesky_solve(&l, k, &rhs))
}

/// Replaces the plan's MUs with the clipped ridge solution; positions are kept.
pub fn ridge_refine(target: &FluenceGrid, plan: &PlanSequence, cfg: &RidgeConfig) -> Result<PlanSequence> {
    let m = solve_ridge(target, plan, cfg.alpha)?;
    let mut refined = plan.clone();
    for (state, mu) in refined.states.iter_mut().zip(m) {
        state.mu = mu.clamp(0.0, cfg.max_mu);
    }
    Ok(refined)
}
