//! Reconstruction error and plan statistics.

use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, PlanSequence};

/// Fluence delivered by the whole plan.
pub fn reconstruct(plan: &PlanSequence) -> Result<FluenceGrid> {
    let (rows, cols) = plan.grid_shape;
    let mut grid = FluenceGrid::zeros(rows, cols);
    for state in &plan.states {
        if state.pairs.len() != rows {
            return Err(Error::contract("plan state does not match its grid shape"));
        }
        for (x, pair) in state.pairs.iter().enumerate() {
            if !pair.is_valid(cols) {
                return Err(Error::contract(format!("invalid leaf pair {pair:?}")));
            }
            grid.add_interval(x, *pair, state.mu);
        }
    }
    Ok(grid)
}

/// `||F − F̂||₂ / ||F||₂` for one target.
pub fn normalized_error(target: &FluenceGrid, predicted: &FluenceGrid) -> Result<f64> {
    if target.shape() != predicted.shape() {
        return Err(Error::contract(format!(
            "target {:?} and prediction {:?} differ in shape",
            target.shape(),
            predicted.shape()
        )));
    }
    let norm = target.l2_norm();
    if norm <= 0.0 {
        return Err(Error::EmptyTarget);
    }
    let diff: f64 = target
        .values()
        .iter()
        .zip(predicted.values())
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(diff.sqrt() / norm)
}

/// Mean over samples of the L2 norm ratio (not squared).
pub fn mnse<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a FluenceGrid, &'a FluenceGrid)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (target, predicted) in pairs {
        sum += normalized_error(target, predicted)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("mnse of an empty sample".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafSpeed {
    pub mean_abs_delta: f64,
    pub max_abs_delta: f64,
}

/// Statistics of `|a^k − a^{k−1}|` and `|b^k − b^{k−1}|` over all pairs.
pub fn leaf_speed_stats(plan: &PlanSequence) -> Result<LeafSpeed> {
    if plan.len() < 2 {
        return Err(Error::InvalidArgument("leaf speed needs at least two control points".into()));
    }
    let mut sum = 0i64;
    let mut max = 0i64;
    let mut n = 0usize;
    for w in plan.states.windows(2) {
        for (p, q) in w[0].pairs.iter().zip(&w[1].pairs) {
            for d in [(q.a - p.a).abs(), (q.b - p.b).abs()] {
                sum += d;
                max = max.max(d);
                n += 1;
            }
        }
    }
    Ok(LeafSpeed {
        mean_abs_delta: sum as f64 / n as f64,
        max_abs_delta: max as f64,
    })
}
