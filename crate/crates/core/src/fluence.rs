//! Fluence grids, MLC geometry, and the maps from leaf configurations to fluence.
//!
//! Rows of a grid correspond to leaf pairs, columns to the leaf-travel axis.
//! Leaf positions sit on column boundaries `0..=Y` and a pair `(a, b)` exposes
//! the half-open column interval `[a, b)`.

use crate::error::{Error, Result};
use crate::normalize::CropBox;

/// Nonnegative `rows x cols` intensity grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FluenceGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FluenceGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows < 1 || cols < 2 {
            return Err(Error::InvalidArgument(format!(
                "fluence grid needs at least 1 row and 2 columns, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for a {rows}x{cols} grid, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "fluence values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 2, "grid shape {rows}x{cols} too small");
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.cols..(x + 1) * self.cols]
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.cols + y]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn has_positive(&self) -> bool {
        self.values.iter().any(|&v| v > 0.0)
    }

    /// Adds `weight` to every cell of row `x` in `[a, b)`.
    pub(crate) fn add_interval(&mut self, x: usize, pair: LeafPair, weight: f64) {
        let (a, b) = pair.clamped_bounds(self.cols);
        let row = &mut self.values[x * self.cols..(x + 1) * self.cols];
        for v in &mut row[a..b] {
            *v += weight;
        }
    }
}

/// Integer leaf positions of one pair. `a` is the left (tail) leaf, `b` the
/// right (front) leaf. Raw values may lie outside `[0, Y]` or cross before the
/// environment enforces them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LeafPair {
    pub a: i64,
    pub b: i64,
}

impl LeafPair {
    pub const fn new(a: i64, b: i64) -> Self {
        Self { a, b }
    }

    pub fn is_open(&self) -> bool {
        self.b > self.a
    }

    pub fn width(&self) -> i64 {
        (self.b - self.a).max(0)
    }

    pub fn is_valid(&self, cols: usize) -> bool {
        0 <= self.a && self.a <= self.b && self.b <= cols as i64
    }

    fn clamped_bounds(&self, cols: usize) -> (usize, usize) {
        let a = self.a.clamp(0, cols as i64) as usize;
        let b = self.b.clamp(0, cols as i64) as usize;
        (a, b.max(a))
    }
}

/// Leaf positions of every pair at one control point plus its monitor unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineState {
    pub pairs: Vec<LeafPair>,
    pub mu: f64,
}

impl MachineState {
    pub fn new(pairs: Vec<LeafPair>, mu: f64) -> Self {
        Self { pairs, mu }
    }

    fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        let (rows, cols) = shape;
        if self.pairs.len() != rows {
            return Err(Error::contract(format!(
                "machine state has {} leaf pairs, grid has {rows} rows",
                self.pairs.len()
            )));
        }
        if let Some(p) = self.pairs.iter().find(|p| !p.is_valid(cols)) {
            return Err(Error::contract(format!(
                "leaf pair ({}, {}) invalid for {cols} columns",
                p.a, p.b
            )));
        }
        Ok(())
    }
}

/// A full leaf sequence: K control points for one target grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSequence {
    pub states: Vec<MachineState>,
    pub grid_shape: (usize, usize),
    pub crop_record: Option<CropBox>,
}

impl PlanSequence {
    pub fn new(states: Vec<MachineState>, grid_shape: (usize, usize)) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::contract("plan needs at least one control point"));
        }
        for s in &states {
            s.check_shape(grid_shape)?;
            if !(s.mu.is_finite() && s.mu >= 0.0) {
                return Err(Error::contract(format!("invalid monitor unit {}", s.mu)));
            }
        }
        Ok(Self {
            states,
            grid_shape,
            crop_record: None,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mus(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.mu).collect()
    }
}

/// Binary aperture mask of one control point.
pub fn unit_fluence(state: &MachineState, shape: (usize, usize)) -> Result<FluenceGrid> {
    state.check_shape(shape)?;
    let mut grid = FluenceGrid::zeros(shape.0, shape.1);
    for (x, pair) in state.pairs.iter().enumerate() {
        grid.add_interval(x, *pair, 1.0);
    }
    Ok(grid)
}

/// Returns `prev + mu * unit_fluence(state)`.
pub fn accumulate(prev: &FluenceGrid, state: &MachineState) -> Result<FluenceGrid> {
    state.check_shape(prev.shape())?;
    let mut next = prev.clone();
    for (x, pair) in state.pairs.iter().enumerate() {
        next.add_interval(x, *pair, state.mu);
    }
    Ok(next)
}

/// Area and perimeter of the rectilinear union of the open cells.
///
/// Every open row contributes its two unit-height side edges; horizontal
/// edges are the symmetric difference of neighbouring rows' intervals, with
/// an implicit closed row above the first and below the last pair.
pub fn aperture_area_perimeter(pairs: &[LeafPair]) -> (f64, f64) {
    let mut area = 0i64;
    let mut perimeter = 0i64;
    let mut above: Option<LeafPair> = None;
    for pair in pairs {
        let width = pair.width();
        area += width;
        if width > 0 {
            perimeter += 2;
        }
        perimeter += interval_sym_diff(above, Some(*pair));
        above = Some(*pair);
    }
    perimeter += interval_sym_diff(above, None);
    (area as f64, perimeter as f64)
}

fn interval_sym_diff(p: Option<LeafPair>, q: Option<LeafPair>) -> i64 {
    let len = |o: Option<LeafPair>| o.map_or(0, |p| p.width());
    let overlap = match (p, q) {
        (Some(p), Some(q)) if p.is_open() && q.is_open() => (p.b.min(q.b) - p.a.max(q.a)).max(0),
        _ => 0,
    };
    len(p) + len(q) - 2 * overlap
}
