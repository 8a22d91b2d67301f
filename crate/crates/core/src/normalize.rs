//! Normalization of heterogeneous targets and post-processing of sequences.
//!
//! The policy only ever sees targets cropped to their region of interest and
//! resampled to a fixed column count. Positions it predicts in that normalized
//! frame are mapped back affinely to the original columns. Sequences can then
//! be shortened by merging adjacent control points.

use rand::Rng;

use crate::env::enforce;
use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, LeafPair, MachineState, PlanSequence};

/// Tight bounding box of the strictly positive cells, half-open upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x1: usize,
    pub x2: usize,
    pub y1: usize,
    pub y2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x1: usize,
    pub x2: usize,
    pub y1: usize,
    pub y2: usize,
    pub original_shape: (usize, usize),
}

impl CropBox {
    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            x1: 0,
            x2: shape.0,
            y1: 0,
            y2: shape.1,
            original_shape: shape,
        }
    }

    pub fn is_valid(&self) -> bool {
        let (rows, cols) = self.original_shape;
        self.x1 < self.x2 && self.x2 <= rows && self.y1 < self.y2 && self.y2 <= cols
    }

    pub fn width(&self) -> usize {
        self.y2 - self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Deterministic margins halfway to the grid edges.
    Inference,
    /// Margins drawn uniformly for augmentation.
    Train,
}

pub fn detect_roi(grid: &FluenceGrid) -> Result<Roi> {
    let mut roi: Option<Roi> = None;
    for x in 0..grid.rows() {
        for (y, &v) in grid.row(x).iter().enumerate() {
            if v > 0.0 {
                let r = roi.get_or_insert(Roi {
                    x1: x,
                    x2: x + 1,
                    y1: y,
                    y2: y + 1,
                });
                r.x1 = r.x1.min(x);
                r.x2 = r.x2.max(x + 1);
                r.y1 = r.y1.min(y);
                r.y2 = r.y2.max(y + 1);
            }
        }
    }
    roi.ok_or(Error::EmptyTarget)
}

pub fn make_crop<R: Rng + ?Sized>(roi: Roi, shape: (usize, usize), mode: CropMode, rng: &mut R) -> CropBox {
    let cols = shape.1;
    let (y1, y2) = match mode {
        CropMode::Inference => (roi.y1 / 2, (roi.y2 + cols).div_ceil(2)),
        CropMode::Train => (rng.random_range(0..=roi.y1), rng.random_range(roi.y2..=cols)),
    };
    CropBox {
        x1: roi.x1,
        x2: roi.x2,
        y1,
        y2,
        original_shape: shape,
    }
}

/// Center-aligned linear resampling of `row` to `n` samples.
///
/// Sample `j` of the output sits at source index `(j + 0.5)·m/n − 0.5`. Edge
/// samples extrapolate from the two outermost source cells, so affine profiles
/// are reproduced exactly. Results are clamped at zero.
pub fn resample_row(row: &[f64], n: usize) -> Vec<f64> {
    let m = row.len();
    if m == n {
        return row.to_vec();
    }
    if m == 1 {
        return vec![row[0].max(0.0); n];
    }
    let ratio = m as f64 / n as f64;
    (0..n)
        .map(|j| {
            let u = (j as f64 + 0.5) * ratio - 0.5;
            let i0 = (u.floor().max(0.0) as usize).min(m - 2);
            let t = u - i0 as f64;
            (row[i0] * (1.0 - t) + row[i0 + 1] * t).max(0.0)
        })
        .collect()
}

/// Keeps rows `x1..x2` and resamples columns `y1..y2` to `y_norm`.
pub fn crop_and_resize(grid: &FluenceGrid, crop: &CropBox, y_norm: usize) -> Result<FluenceGrid> {
    if !crop.is_valid() || crop.original_shape != grid.shape() {
        return Err(Error::contract(format!("crop {crop:?} invalid for grid {:?}", grid.shape())));
    }
    let mut values = Vec::with_capacity((crop.x2 - crop.x1) * y_norm);
    for x in crop.x1..crop.x2 {
        values.extend(resample_row(&grid.row(x)[crop.y1..crop.y2], y_norm));
    }
    FluenceGrid::new(crop.x2 - crop.x1, y_norm, values)
}

fn round_half_down(v: f64) -> i64 {
    (v - 0.5).ceil() as i64
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Maps one control point's normalized-frame pairs back to original columns.
///
/// Rows outside the crop are closed at the crop's column midpoint. Ties round
/// toward the wider opening.
pub fn map_pairs_back(pairs: &[LeafPair], crop: &CropBox, y_norm: usize) -> Result<Vec<LeafPair>> {
    if pairs.len() != crop.x2 - crop.x1 {
        return Err(Error::contract(format!(
            "{} normalized rows for a crop of {} rows",
            pairs.len(),
            crop.x2 - crop.x1
        )));
    }
    let (rows, cols) = crop.original_shape;
    let scale = crop.width() as f64 / y_norm as f64;
    let to_col = |p: i64| p as f64 * scale + crop.y1 as f64;
    let mid = ((crop.y1 + crop.y2) / 2) as i64;
    Ok((0..rows)
        .map(|x| {
            if x < crop.x1 || x >= crop.x2 {
                LeafPair::new(mid, mid)
            } else {
                let p = pairs[x - crop.x1];
                enforce(LeafPair::new(round_half_down(to_col(p.a)), round_half_up(to_col(p.b))), cols)
            }
        })
        .collect())
}

/// Back-maps a whole `K x X'` sequence of normalized positions.
pub fn map_positions_back(positions: &[Vec<LeafPair>], crop: &CropBox, y_norm: usize) -> Result<Vec<Vec<LeafPair>>> {
    positions.iter().map(|cp| map_pairs_back(cp, crop, y_norm)).collect()
}

/// Indices `i` such that control points `i` and `i + 1` are merged. Pairs are
/// disjoint and spread evenly over the sequence.
fn merge_starts(k: usize, merges: usize) -> Vec<usize> {
    (0..merges)
        .map(|i| {
            let lo = i * k / merges;
            let hi = (i + 1) * k / merges;
            lo + (hi - lo - 2) / 2
        })
        .collect()
}

/// Shortens a plan to `k_target` control points by pairwise merging.
///
/// A merged control point takes the mean of the two source positions (rounded
/// toward the wider opening) and the sum of their monitor units.
pub fn merge_control_points(plan: &PlanSequence, k_target: usize) -> Result<PlanSequence> {
    let k = plan.len();
    if k_target > k {
        return Err(Error::InvalidArgument(format!(
            "cannot merge {k} control points up to {k_target}"
        )));
    }
    if k_target < k.div_ceil(2) || k_target == 0 {
        return Err(Error::InvalidArgument(format!(
            "pairwise merging cannot reduce {k} control points to {k_target}"
        )));
    }
    let starts = merge_starts(k, k - k_target);
    let mut states = Vec::with_capacity(k_target);
    let mut i = 0;
    let mut next_merge = starts.iter().peekable();
    while i < k {
        if next_merge.peek() == Some(&&i) {
            next_merge.next();
            let (p, q) = (&plan.states[i], &plan.states[i + 1]);
            let pairs = p
                .pairs
                .iter()
                .zip(&q.pairs)
                .map(|(u, v)| LeafPair::new((u.a + v.a).div_euclid(2), (u.b + v.b + 1).div_euclid(2)))
                .collect();
            states.push(MachineState::new(pairs, p.mu + q.mu));
            i += 2;
        } else {
            states.push(plan.states[i].clone());
            i += 1;
        }
    }
    let mut merged = PlanSequence::new(states, plan.grid_shape)?;
    merged.crop_record = plan.crop_record;
    Ok(merged)
}
