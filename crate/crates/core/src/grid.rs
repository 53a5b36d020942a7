//! Tensor grids over the augmented space and value tables on them.
//!
//! Axis order is x_0..x_{n-1}, sigma_1, theta_1.., sigma_2, theta_2..; node
//! indices are row-major with the last axis fastest.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{structural, Error, Result};
use crate::model::{AugmentedState, GameSpec, Player};

/// Fractions this close to a node snap onto it, so on-grid queries touch a
/// single node along that axis.
pub const SNAP_TOL: f64 = 1e-9;

pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl UniformAxis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        UniformAxis { lo, hi, count }
    }

    /// Axis from 0 to `hi` with spacing `step`.
    pub fn clock(hi: f64, step: f64) -> Self {
        let cells = (hi / step).round() as usize;
        UniformAxis { lo: 0.0, hi: cells as f64 * step, count: cells + 1 }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    /// Enclosing cell of `v`: `(i0, frac)` with frac in [0, 1), or a snapped
    /// node with frac 0. The flag reports clamping.
    pub fn locate(&self, v: f64) -> (usize, f64, bool) {
        let width = self.hi - self.lo;
        if width <= 0.0 {
            return (0, 0.0, v != self.lo);
        }
        let clamped = v < self.lo || v > self.hi;
        let pos = ((v.clamp(self.lo, self.hi) - self.lo) / width) * (self.count - 1) as f64;
        let mut i0 = pos.floor() as usize;
        if i0 >= self.count - 1 {
            return (self.count - 1, 0.0, clamped);
        }
        let mut frac = pos - i0 as f64;
        if frac < SNAP_TOL {
            frac = 0.0;
        } else if frac > 1.0 - SNAP_TOL {
            i0 += 1;
            frac = 0.0;
        }
        (i0, frac, clamped)
    }

    pub fn nearest(&self, v: f64) -> usize {
        let (i0, frac, _) = self.locate(v);
        if frac >= 0.5 {
            i0 + 1
        } else {
            i0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub state_axes: Vec<UniformAxis>,
    pub sigma_axes: [UniformAxis; 2],
    pub theta_axes: [Vec<UniformAxis>; 2],
    /// Empty means: the clock-axis nodes inside the dwell bounds.
    #[serde(default)]
    pub dwell_candidates: [Vec<f64>; 2],
    /// Empty means: every node of the parameter axes.
    #[serde(default)]
    pub param_candidates: [Vec<Vec<f64>>; 2],
    #[serde(default = "default_budget")]
    pub node_budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}

impl GridConfig {
    /// Clock axes with spacing `clock_step` up to each player's max dwell;
    /// parameter axes spanning each box with `theta_nodes` nodes.
    pub fn uniform(spec: &GameSpec, state_nodes: &[usize], clock_step: f64, theta_nodes: usize) -> Self {
        let state_axes = spec
            .state_box
            .lower
            .iter()
            .zip(&spec.state_box.upper)
            .zip(state_nodes)
            .map(|((lo, hi), c)| UniformAxis::new(*lo, *hi, *c))
            .collect();
        let sigma = |p: Player| UniformAxis::clock(spec.player(p).dwell_bounds.max, clock_step);
        let theta = |p: Player| {
            let b = &spec.player(p).param_box;
            b.lower.iter().zip(&b.upper).map(|(lo, hi)| UniformAxis::new(*lo, *hi, theta_nodes)).collect()
        };
        GridConfig {
            state_axes,
            sigma_axes: [sigma(Player::One), sigma(Player::Two)],
            theta_axes: [theta(Player::One), theta(Player::Two)],
            dwell_candidates: [Vec::new(), Vec::new()],
            param_candidates: [Vec::new(), Vec::new()],
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

/// A validated grid with its decision candidate sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
    m: [usize; 2],
    axes: Vec<UniformAxis>,
    strides: Vec<usize>,
    len: usize,
    dwell_candidates: [Vec<f64>; 2],
    param_candidates: [Vec<Vec<f64>>; 2],
}

pub type Point = SmallVec<[f64; 16]>;
pub type Stencil = SmallVec<[(u32, f64); 16]>;

impl GridSpec {
    pub fn new(spec: &GameSpec, config: &GridConfig) -> Result<Self> {
        let n = spec.state_dim();
        if config.state_axes.len() != n {
            return Err(structural(format!(
                "grid has {} state axes, the state has {n} dimensions",
                config.state_axes.len()
            )));
        }
        let m = [spec.players[0].param_dim(), spec.players[1].param_dim()];
        let mut axes = config.state_axes.clone();
        for p in Player::BOTH {
            let i = p.index();
            let sa = config.sigma_axes[i];
            if sa.lo != 0.0 {
                return Err(structural(format!("clock axis of {p} must start at 0")));
            }
            if sa.hi < spec.player(p).dwell_bounds.max - 1e-12 {
                return Err(structural(format!(
                    "clock axis of {p} ends at {} below the max dwell {}",
                    sa.hi,
                    spec.player(p).dwell_bounds.max
                )));
            }
            if config.theta_axes[i].len() != m[i] {
                return Err(structural(format!(
                    "grid has {} parameter axes for {p}, expected {}",
                    config.theta_axes[i].len(),
                    m[i]
                )));
            }
            axes.push(sa);
            axes.extend_from_slice(&config.theta_axes[i]);
        }
        for (k, a) in axes.iter().enumerate() {
            if a.count < 2 {
                return Err(structural(format!("axis {k} needs at least 2 nodes")));
            }
            if !(a.lo <= a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(structural(format!("axis {k} has invalid bounds [{}, {}]", a.lo, a.hi)));
            }
        }
        let mut len: usize = 1;
        for a in &axes {
            len = len
                .checked_mul(a.count)
                .filter(|l| *l <= config.node_budget)
                .ok_or_else(|| {
                    structural(format!("grid exceeds the node budget of {}", config.node_budget))
                })?;
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].count;
        }

        let mut dwell_candidates = config.dwell_candidates.clone();
        let mut param_candidates = config.param_candidates.clone();
        for p in Player::BOTH {
            let i = p.index();
            let ps = spec.player(p);
            if dwell_candidates[i].is_empty() {
                dwell_candidates[i] = config.sigma_axes[i]
                    .nodes()
                    .into_iter()
                    .filter(|t| ps.dwell_bounds.contains(*t, 1e-12))
                    .map(|t| ps.dwell_bounds.clamp(t))
                    .collect();
            }
            if param_candidates[i].is_empty() {
                param_candidates[i] = cartesian(&config.theta_axes[i]);
            }
            if dwell_candidates[i].is_empty() || param_candidates[i].is_empty() {
                return Err(structural(format!("empty candidate set for {p}")));
            }
            for t in &dwell_candidates[i] {
                if !ps.dwell_bounds.contains(*t, 1e-12) {
                    return Err(structural(format!("dwell candidate {t} of {p} outside its bounds")));
                }
            }
            for th in &param_candidates[i] {
                if !ps.param_box.contains(th, 1e-12) {
                    return Err(structural(format!("parameter candidate {th:?} of {p} outside its box")));
                }
            }
        }
        Ok(GridSpec { n, m, axes, strides, len, dwell_candidates, param_candidates })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[UniformAxis] {
        &self.axes
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn param_dim(&self, p: Player) -> usize {
        self.m[p.index()]
    }

    /// Axis index of sigma_p.
    pub fn sigma_axis(&self, p: Player) -> usize {
        match p {
            Player::One => self.n,
            Player::Two => self.n + 1 + self.m[0],
        }
    }

    /// Axis indices of theta_p.
    pub fn theta_axes(&self, p: Player) -> std::ops::Range<usize> {
        let s = self.sigma_axis(p) + 1;
        s..s + self.m[p.index()]
    }

    pub fn dwell_candidates(&self, p: Player) -> &[f64] {
        &self.dwell_candidates[p.index()]
    }

    pub fn param_candidates(&self, p: Player) -> &[Vec<f64>] {
        &self.param_candidates[p.index()]
    }

    pub fn axis_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.n).map(|i| format!("x{i}")).collect();
        for p in Player::BOTH {
            out.push(format!("sigma{}", p.index() + 1));
            out.extend((0..self.m[p.index()]).map(|j| format!("theta{}_{j}", p.index() + 1)));
        }
        out
    }

    pub fn coords(&self, idx: usize, out: &mut [usize]) {
        let mut r = idx;
        for (k, s) in self.strides.iter().enumerate() {
            out[k] = r / s;
            r %= s;
        }
    }

    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.axes[axis].count
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// True when sigma_p is exactly zero at the node.
    pub fn on_boundary(&self, idx: usize, p: Player) -> bool {
        self.coord(idx, self.sigma_axis(p)) == 0
    }

    pub fn point(&self, idx: usize) -> Point {
        let mut r = idx;
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| {
                let c = r / s;
                r %= s;
                a.node(c)
            })
            .collect()
    }

    pub fn state(&self, idx: usize) -> AugmentedState {
        self.unflatten(&self.point(idx))
    }

    pub fn flatten(&self, chi: &AugmentedState) -> Point {
        let mut p = Point::new();
        p.extend_from_slice(&chi.x);
        for i in 0..2 {
            p.push(chi.sigma[i]);
            p.extend_from_slice(&chi.theta[i]);
        }
        p
    }

    pub fn unflatten(&self, p: &[f64]) -> AugmentedState {
        let n = self.n;
        let s2 = self.sigma_axis(Player::Two);
        AugmentedState {
            x: p[..n].to_vec(),
            sigma: [p[n], p[s2]],
            theta: [p[n + 1..s2].to_vec(), p[s2 + 1..].to_vec()],
        }
    }

    /// Multilinear stencil at a flattened point. Returns true if any
    /// coordinate was clamped into the grid.
    pub fn stencil_into(&self, point: &[f64], out: &mut Stencil) -> bool {
        out.clear();
        out.push((0, 1.0));
        let mut clamped = false;
        for (k, a) in self.axes.iter().enumerate() {
            let (i0, frac, c) = a.locate(point[k]);
            clamped |= c;
            let s = self.strides[k] as u32;
            if frac == 0.0 {
                for e in out.iter_mut() {
                    e.0 += i0 as u32 * s;
                }
            } else {
                let len = out.len();
                for j in 0..len {
                    let (idx, w) = out[j];
                    out[j] = (idx + i0 as u32 * s, w * (1.0 - frac));
                    out.push((idx + (i0 as u32 + 1) * s, w * frac));
                }
            }
        }
        if clamped {
            debug!("interpolation query {point:?} clamped into the grid");
        }
        clamped
    }

    pub fn stencil(&self, point: &[f64]) -> Stencil {
        let mut s = Stencil::new();
        self.stencil_into(point, &mut s);
        s
    }

    /// Index of the nearest node (per-axis rounding, clamped).
    pub fn nearest(&self, point: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(&self.strides)
            .zip(point)
            .map(|((a, s), v)| a.nearest(*v) * s)
            .sum()
    }
}

fn cartesian(axes: &[UniformAxis]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                a.nodes().into_iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// One scalar per grid node.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    pub grid: Arc<GridSpec>,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    format: String,
    labels: Vec<String>,
    grid: GridSpec,
}

impl ValueGrid {
    pub fn constant(grid: Arc<GridSpec>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        ValueGrid { grid, values }
    }

    pub fn from_values(grid: Arc<GridSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(structural(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("value table contains non-finite entries".into()));
        }
        Ok(ValueGrid { grid, values })
    }

    pub fn from_fn(grid: Arc<GridSpec>, f: impl Fn(&AugmentedState) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.state(i))).collect();
        ValueGrid { grid, values }
    }

    pub fn interpolate_point(&self, point: &[f64]) -> f64 {
        let mut s = Stencil::new();
        self.grid.stencil_into(point, &mut s);
        s.iter().map(|(i, w)| w * self.values[*i as usize]).sum()
    }

    /// Multilinear interpolation; out-of-grid queries are clamped.
    pub fn interpolate(&self, chi: &AugmentedState) -> f64 {
        self.interpolate_point(&self.grid.flatten(chi))
    }

    pub fn same_grid(&self, other: &ValueGrid) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn prefix(path: &Path, ext: &str) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    }

    /// Writes `<prefix>.json` (axes, counts, candidates) and `<prefix>.bin`
    /// (values as little-endian f64 in node order).
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let header = TableHeader {
            format: "f64-le".into(),
            labels: self.grid.axis_labels(),
            grid: (*self.grid).clone(),
        };
        let f = std::fs::File::create(Self::prefix(prefix, ".json"))?;
        serde_json::to_writer_pretty(f, &header)?;
        let mut bin = std::io::BufWriter::new(std::fs::File::create(Self::prefix(prefix, ".bin"))?);
        for v in &self.values {
            bin.write_all(&v.to_le_bytes())?;
        }
        bin.flush()?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let header: TableHeader =
            serde_json::from_reader(std::fs::File::open(Self::prefix(prefix, ".json"))?)?;
        if header.format != "f64-le" {
            return Err(structural(format!("unknown table format {}", header.format)));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(Self::prefix(prefix, ".bin"))?.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(structural("value table length is not a multiple of 8 bytes"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        ValueGrid::from_values(Arc::new(header.grid), values)
    }

    /// CSV over two free axes with the others fixed at `base` coordinates.
    pub fn write_slice_csv<W: Write>(
        &self,
        out: W,
        axis_a: usize,
        axis_b: usize,
        base: &[usize],
    ) -> Result<()> {
        let g = &self.grid;
        if axis_a >= g.axes.len() || axis_b >= g.axes.len() || axis_a == axis_b {
            return Err(structural("slice axes must be two distinct grid axes"));
        }
        if base.len() != g.axes.len() {
            return Err(structural("slice base needs one coordinate per axis"));
        }
        let labels = g.axis_labels();
        let mut w = csv::Writer::from_writer(out);
        w.write_record([labels[axis_a].as_str(), labels[axis_b].as_str(), "value"])?;
        let mut c = base.to_vec();
        for i in 0..g.axes[axis_a].count {
            for j in 0..g.axes[axis_b].count {
                c[axis_a] = i;
                c[axis_b] = j;
                let v = self.values[g.index(&c)];
                w.write_record([
                    g.axes[axis_a].node(i).to_string(),
                    g.axes[axis_b].node(j).to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// max over nodes of |u - v|.
pub fn sup_norm_diff(u: &ValueGrid, v: &ValueGrid) -> Result<f64> {
    if !u.same_grid(v) {
        return Err(structural("sup-norm difference of value tables on different grids"));
    }
    Ok(u.values.iter().zip(&v.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}
