//! Synthetic corpora, fluence and plan text formats, and corpus manifests.
//!
//! Fluence files:
//!
//! ```text
//! FLU 1 <X> <Y>
//! <Y values>        (X lines)
//! ```
//!
//! Plan files:
//!
//! ```text
//! PLN 1 <K> <X> <Y>
//! CP <k> MU <mu>    (K blocks, each followed by X lines "<a> <b>")
//! ```
//!
//! Values are written in shortest round-trip form so reading back is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::fluence::{FluenceGrid, LeafPair, MachineState, PlanSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub shape: (usize, usize),
    /// Inclusive range of blob count (ignored in hard mode).
    pub n_blobs: (usize, usize),
    pub amplitude: (f64, f64),
    /// Standard deviation ranges along rows and columns.
    pub sigma_x: (f64, f64),
    pub sigma_y: (f64, f64),
    /// Probability of adding a flat plateau under a blob.
    pub plateau_prob: f64,
    /// Multi-island targets with 2 to 4 separated components.
    pub hard: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: (8, 32),
            n_blobs: (1, 1),
            amplitude: (4.0, 12.0),
            sigma_x: (1.0, 2.5),
            sigma_y: (2.0, 5.0),
            plateau_prob: 0.0,
            hard: false,
            seed: 0,
        }
    }
}

/// Cells below this fraction of the peak are set to zero.
const CUTOFF: f64 = 0.05;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (x, y) = self.shape;
        let range = |r: (f64, f64)| r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite();
        if x == 0 || y == 0 {
            return Err(Error::Config("synthetic shape must be nonzero".into()));
        }
        if self.n_blobs.0 == 0 || self.n_blobs.0 > self.n_blobs.1 {
            return Err(Error::Config("blob count range must be nonempty and >= 1".into()));
        }
        if !range(self.amplitude) || !range(self.sigma_x) || !range(self.sigma_y) {
            return Err(Error::Config("amplitude and width ranges must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.plateau_prob) {
            return Err(Error::Config("plateau_prob must lie in [0, 1]".into()));
        }
        if self.hard && y < 5 {
            return Err(Error::Config("hard mode needs at least 5 columns".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(r: (f64, f64), rng: &mut R) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn add_blob(values: &mut [f64], shape: (usize, usize), center: (f64, f64), amp: f64, sigma: (f64, f64), cols: std::ops::Range<usize>) {
    let (_, ny) = shape;
    for x in 0..shape.0 {
        let dx = (x as f64 - center.0) / sigma.0;
        for y in cols.clone() {
            let dy = (y as f64 - center.1) / sigma.1;
            values[x * ny + y] += amp * (-0.5 * (dx * dx + dy * dy)).exp();
        }
    }
}

fn add_plateau<R: Rng + ?Sized>(values: &mut [f64], shape: (usize, usize), center: (f64, f64), sigma: (f64, f64), amp: f64, rng: &mut R) {
    let (nx, ny) = shape;
    let h = amp * rng.random_range(0.2..0.5);
    let x0 = (center.0 - sigma.0).round().max(0.0) as usize;
    let x1 = ((center.0 + sigma.0).round() as usize + 1).min(nx);
    let y0 = (center.1 - sigma.1).round().max(0.0) as usize;
    let y1 = ((center.1 + sigma.1).round() as usize + 1).min(ny);
    for x in x0..x1 {
        for y in y0..y1 {
            values[x * ny + y] += h;
        }
    }
}

/// Sum of axis-aligned Gaussian blobs, truncated below 5% of the peak.
pub fn gen_fluence<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<FluenceGrid> {
    cfg.validate()?;
    let (nx, ny) = cfg.shape;
    let mut values = vec![0.0; nx * ny];
    if cfg.hard {
        let islands = rng.random_range(2..=4usize).min((ny + 1) / 3);
        let seg = ny as f64 / islands as f64;
        for i in 0..islands {
            // island i owns columns [lo, hi); the first column of every later
            // segment stays empty so islands never touch
            let lo = (i as f64 * seg).round() as usize + usize::from(i > 0);
            let hi = (((i + 1) as f64 * seg).round() as usize).min(ny);
            let width = (hi - lo) as f64;
            let center = (rng.random_range(0.0..nx as f64 - 1.0 + f64::EPSILON).round(), lo as f64 + (width - 1.0) / 2.0);
            let sigma = (uniform(cfg.sigma_x, rng), uniform(cfg.sigma_y, rng).min(width / 3.0).max(0.5));
            let amp = uniform(cfg.amplitude, rng);
            add_blob(&mut values, cfg.shape, center, amp, sigma, lo..hi);
            if rng.random_bool(cfg.plateau_prob) {
                let mut plateau = vec![0.0; nx * ny];
                add_plateau(&mut plateau, cfg.shape, center, sigma, amp, rng);
                for x in 0..nx {
                    for y in lo..hi {
                        values[x * ny + y] += plateau[x * ny + y];
                    }
                }
            }
        }
    } else {
        let n = rng.random_range(cfg.n_blobs.0..=cfg.n_blobs.1);
        for _ in 0..n {
            let center = (
                rng.random_range(0..nx) as f64,
                rng.random_range((ny / 4)..=(3 * ny / 4).min(ny - 1).max(ny / 4)) as f64,
            );
            let sigma = (uniform(cfg.sigma_x, rng), uniform(cfg.sigma_y, rng));
            let amp = uniform(cfg.amplitude, rng);
            add_blob(&mut values, cfg.shape, center, amp, sigma, 0..ny);
            if rng.random_bool(cfg.plateau_prob) {
                add_plateau(&mut values, cfg.shape, center, sigma, amp, rng);
            }
        }
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    values.iter_mut().for_each(|v| {
        if *v < CUTOFF * peak {
            *v = 0.0
        }
    });
    FluenceGrid::new(nx, ny, values)
}

fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:?}").expect("writing to a String");
}

pub fn fluence_to_string(grid: &FluenceGrid) -> String {
    let (rows, cols) = grid.shape();
    let mut out = format!("FLU 1 {rows} {cols}\n");
    for x in 0..rows {
        for (y, v) in grid.row(x).iter().enumerate() {
            if y > 0 {
                out.push(' ');
            }
            fmt_f64(&mut out, *v);
        }
        out.push('\n');
    }
    out
}

fn header<'a>(line: Option<(usize, &'a str)>, magic: &str, fields: usize) -> Result<Vec<usize>> {
    let (n, text) = line.ok_or_else(|| Error::parse(1, "empty file"))?;
    let mut tok = text.split_whitespace();
    if tok.next() != Some(magic) {
        return Err(Error::parse(n, format!("expected `{magic}` header")));
    }
    if tok.next() != Some("1") {
        return Err(Error::parse(n, "unsupported format version"));
    }
    let dims = tok
        .map(|t| t.parse::<usize>().map_err(|_| Error::parse(n, format!("bad dimension `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() != fields {
        return Err(Error::parse(n, format!("header needs {fields} dimensions")));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::parse(n, "dimensions must be positive"));
    }
    if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none_or(|p| p > 1 << 28) {
        return Err(Error::parse(n, "dimensions too large"));
    }
    Ok(dims)
}

/// Numbered lines with blank lines skipped.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn trailing(mut it: impl Iterator<Item = (usize, impl AsRef<str>)>) -> Result<()> {
    match it.next() {
        Some((n, _)) => Err(Error::parse(n, "unexpected trailing content")),
        None => Ok(()),
    }
}

fn last_line(text: &str) -> usize {
    text.lines().count().max(1)
}

pub fn parse_fluence(text: &str) -> Result<FluenceGrid> {
    let mut it = lines(text);
    let dims = header(it.next(), "FLU", 2)?;
    let (rows, cols) = (dims[0], dims[1]);
    let mut values = Vec::with_capacity(rows * cols);
    for x in 0..rows {
        let (n, line) = it
            .next()
            .ok_or_else(|| Error::parse(last_line(text), format!("truncated: expected {rows} rows, found {x}")))?;
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::parse(n, format!("bad value `{tok}`")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::parse(n, format!("value {tok} must be finite and >= 0")));
            }
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::parse(n, format!("expected {cols} values, found {}", values.len() - before)));
        }
    }
    trailing(it)?;
    FluenceGrid::new(rows, cols, values)
}

pub fn write_fluence(path: &Path, grid: &FluenceGrid) -> Result<()> {
    fs::write(path, fluence_to_string(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_fluence(path: &Path) -> Result<FluenceGrid> {
    parse_fluence(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn plan_to_string(plan: &PlanSequence) -> String {
    let (rows, cols) = plan.grid_shape;
    let mut out = format!("PLN 1 {} {rows} {cols}\n", plan.len());
    for (k, st) in plan.states.iter().enumerate() {
        write!(out, "CP {k} MU ").expect("writing to a String");
        fmt_f64(&mut out, st.mu);
        out.push('\n');
        for p in &st.pairs {
            writeln!(out, "{} {}", p.a, p.b).expect("writing to a String");
        }
    }
    out
}

/// Parses a plan; monitor units must lie in `[0, max_mu]`.
pub fn parse_plan(text: &str, max_mu: f64) -> Result<PlanSequence> {
    let mut it = lines(text);
    let dims = header(it.next(), "PLN", 3)?;
    let (k_total, rows, cols) = (dims[0], dims[1], dims[2]);
    let truncated = || Error::parse(last_line(text), "truncated plan");
    let mut states = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let (n, line) = it.next().ok_or_else(truncated)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 || tok[0] != "CP" || tok[2] != "MU" {
            return Err(Error::parse(n, "expected `CP <k> MU <mu>`"));
        }
        if tok[1].parse::<usize>().ok() != Some(k) {
            return Err(Error::parse(n, format!("expected control point index {k}")));
        }
        let mu: f64 = tok[3].parse().map_err(|_| Error::parse(n, format!("bad MU `{}`", tok[3])))?;
        if !mu.is_finite() || !(0.0..=max_mu).contains(&mu) {
            return Err(Error::parse(n, format!("MU {} outside [0, {max_mu}]", tok[3])));
        }
        let mut pairs = Vec::with_capacity(rows);
        for _ in 0..rows {
            let (n, line) = it.next().ok_or_else(truncated)?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            let parse = |t: &str| t.parse::<i64>().map_err(|_| Error::parse(n, format!("bad leaf position `{t}`")));
            if tok.len() != 2 {
                return Err(Error::parse(n, "expected `<a> <b>`"));
            }
            let pair = LeafPair::new(parse(tok[0])?, parse(tok[1])?);
            if !pair.is_valid(cols) {
                return Err(Error::parse(n, format!("leaf pair ({}, {}) violates 0 <= a <= b <= {cols}", pair.a, pair.b)));
            }
            pairs.push(pair);
        }
        states.push(MachineState::new(pairs, mu));
    }
    trailing(it)?;
    PlanSequence::new(states, (rows, cols))
}

pub fn write_plan(path: &Path, plan: &PlanSequence) -> Result<()> {
    fs::write(path, plan_to_string(plan)).map_err(|e| Error::io(path, e))
}

pub fn read_plan(path: &Path, max_mu: f64) -> Result<PlanSequence> {
    parse_plan(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, max_mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Option<Split>,
}

/// Newline list of fluence paths. A `# split: train|val|test` line assigns the
/// split of the paths after it; other `#` lines are comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses a manifest, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut split = None;
        let mut entries = Vec::new();
        for (n, line) in lines(text) {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(name) = comment.trim().strip_prefix("split:") {
                    split = Some(match name.trim() {
                        "train" => Split::Train,
                        "val" => Split::Val,
                        "test" => Split::Test,
                        other => return Err(Error::parse(n, format!("unknown split `{other}`"))),
                    });
                }
                continue;
            }
            let p = Path::new(line);
            entries.push(ManifestEntry {
                path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = None;
        for e in &self.entries {
            if e.split != current {
                if let Some(s) = e.split {
                    writeln!(out, "# split: {}", s.name()).expect("writing to a String");
                }
                current = e.split;
            }
            writeln!(out, "{}", e.path.display()).expect("writing to a String");
        }
        out
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.entries.iter().any(|e| e.split == Some(split))
    }

    pub fn paths(&self, split: Option<Split>) -> Vec<&Path> {
        self.entries
            .iter()
            .filter(|e| split.is_none() || e.split == split)
            .map(|e| e.path.as_path())
            .collect()
    }

    /// Paths for training: the train split when present, otherwise every
    /// entry not held out as val or test.
    pub fn training_paths(&self) -> Vec<&Path> {
        if self.has_split(Split::Train) {
            self.paths(Some(Split::Train))
        } else {
            self.entries
                .iter()
                .filter(|e| e.split.is_none())
                .map(|e| e.path.as_path())
                .collect()
        }
    }

    /// Paths for evaluation: the test split when present, otherwise all.
    pub fn eval_paths(&self) -> Vec<&Path> {
        if self.has_split(Split::Test) {
            self.paths(Some(Split::Test))
        } else {
            self.paths(None)
        }
    }
}

pub fn read_corpus(paths: &[&Path]) -> Result<Vec<FluenceGrid>> {
    paths.iter().map(|p| read_fluence(p)).collect()
}
