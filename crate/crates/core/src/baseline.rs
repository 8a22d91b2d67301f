//! Classical level-sweep sequencer used as a comparison baseline.
//!
//! The target is sliced into `K` intensity levels of height `q = max(F)/K`.
//! Control point `k` opens, per row, the widest run of cells reaching level
//! `(k + 0.5)·q`, limited by how far each leaf can travel from the previous
//! control point. Every control point delivers `q` (clamped to the MU range).

use crate::env::enforce;
use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, LeafPair, MachineState, PlanSequence};

/// Widest half-open run of `row` with values `>= level`; leftmost on ties.
fn widest_run(row: &[f64], level: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for y in 0..=row.len() {
        let inside = y < row.len() && row[y] >= level;
        match (inside, start) {
            (true, None) => start = Some(y),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| y - s > b - a) {
                    best = Some((s, y));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

pub fn sweep_sequencer(target: &FluenceGrid, k: usize, mu_range: (f64, f64), max_step: i64) -> Result<PlanSequence> {
    if !target.has_positive() {
        return Err(Error::EmptyTarget);
    }
    if k == 0 || max_step < 1 {
        return Err(Error::InvalidArgument("sweep needs k >= 1 and max_step >= 1".into()));
    }
    let (rows, cols) = target.shape();
    let q = target.max() / k as f64;
    let mu = q.clamp(mu_range.0, mu_range.1);
    let mut prev: Option<Vec<LeafPair>> = None;
    let mut states = Vec::with_capacity(k);
    for level in 0..k {
        let threshold = (level as f64 + 0.5) * q;
        let pairs: Vec<LeafPair> = (0..rows)
            .map(|x| {
                let before = prev.as_ref().map(|p| p[x]);
                let wanted = match (widest_run(target.row(x), threshold), before) {
                    (Some((a, b)), _) => LeafPair::new(a as i64, b as i64),
                    (None, Some(p)) => {
                        let mid = (p.a + p.b).div_euclid(2);
                        LeafPair::new(mid, mid)
                    }
                    (None, None) => LeafPair::new((cols / 2) as i64, (cols / 2) as i64),
                };
                let reachable = match before {
                    Some(p) => LeafPair::new(
                        wanted.a.clamp(p.a - max_step, p.a + max_step),
                        wanted.b.clamp(p.b - max_step, p.b + max_step),
                    ),
                    None => wanted,
                };
                enforce(reachable, cols)
            })
            .collect();
        states.push(MachineState::new(pairs.clone(), mu));
        prev = Some(pairs);
    }
    PlanSequence::new(states, (rows, cols))
}
