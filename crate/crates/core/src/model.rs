//! Problem data: state box, dynamics primitives, players, and the augmented state.
//!
//! Function-valued fields are enums over named built-ins so a [`GameSpec`]
//! round-trips through JSON. Each enum also has a `Custom` variant carrying a
//! closure; those are registered in code and skipped by serde.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{structural, Error, Result};
use crate::rng::{self, SimRng};

/// Small inline buffer for control actions.
pub type Action = SmallVec<[f64; 4]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::One, Player::Two];

    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    pub fn from_index(i: usize) -> Player {
        if i == 0 {
            Player::One
        } else {
            Player::Two
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "player {}", self.index() + 1)
    }
}

/// Axis-aligned box `[lower, upper]` in R^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        BoxBounds { lower, upper }
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        BoxBounds::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn check(&self, what: &str) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(structural(format!(
                "{what}: lower has {} entries, upper has {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(structural(format!("{what}: non-finite bound in dimension {i}")));
            }
            if lo > hi {
                return Err(structural(format!(
                    "{what}: lower bound {lo} exceeds upper bound {hi} in dimension {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// Clamps in place; returns true if any coordinate moved.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            if *v < *lo {
                *v = *lo;
                moved = true;
            } else if *v > *hi {
                *v = *hi;
                moved = true;
            }
        }
        moved
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (b - a)).collect()
    }
}

/// Named closure registered in code.
pub struct Handle<F: ?Sized> {
    pub name: String,
    pub f: Arc<F>,
}

impl<F: ?Sized> Clone for Handle<F> {
    fn clone(&self) -> Self {
        Handle { name: self.name.clone(), f: Arc::clone(&self.f) }
    }
}

impl<F: ?Sized> fmt::Debug for Handle<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({})", self.name)
    }
}

impl<F: ?Sized> Handle<F> {
    pub fn new(name: impl Into<String>, f: Arc<F>) -> Self {
        Handle { name: name.into(), f }
    }
}

pub type DriftFn = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
pub type StateFn = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync;
pub type KernelFn = dyn Fn(&[f64], &[f64], &[f64], &mut SimRng, &mut [f64]) + Send + Sync;
pub type LawFn = dyn Fn(f64, &[f64], &mut Action) + Send + Sync;
pub type DwellFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Dense row-major matrix as nested vectors, the JSON-friendly form.
pub type Rows = Vec<Vec<f64>>;

fn mat_vec_add(m: &Rows, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn quad_form(m: &Rows, v: &[f64]) -> f64 {
    m.iter()
        .zip(v)
        .map(|(row, vi)| vi * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn check_shape(m: &Rows, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(structural(format!("{what}: expected a {rows}x{cols} matrix")));
    }
    Ok(())
}

/// Drift vector field f(x, u1, u2).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    /// f = A x + B1 u1 + B2 u2.
    Linear { a: Rows, b1: Rows, b2: Rows },
    /// Relative double integrator z = [p, v] with `axes` position axes:
    /// p' = v, v' = u1 - u2.
    DoubleIntegratorRelative { axes: usize },
    #[serde(skip)]
    Custom(Handle<DriftFn>),
}

impl Drift {
    pub fn eval(&self, x: &[f64], u1: &[f64], u2: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.fill(0.0),
            Drift::Linear { a, b1, b2 } => {
                out.fill(0.0);
                mat_vec_add(a, x, out);
                mat_vec_add(b1, u1, out);
                mat_vec_add(b2, u2, out);
            }
            Drift::DoubleIntegratorRelative { axes } => {
                let k = *axes;
                out[..k].copy_from_slice(&x[k..2 * k]);
                for j in 0..k {
                    out[k + j] = u1[j] - u2[j];
                }
            }
            Drift::Custom(h) => (h.f)(x, u1, u2, out),
        }
    }

    fn check(&self, n: usize, m1: usize, m2: usize) -> Result<()> {
        match self {
            Drift::Linear { a, b1, b2 } => {
                check_shape(a, n, n, "drift A")?;
                check_shape(b1, n, m1, "drift B1")?;
                check_shape(b2, n, m2, "drift B2")
            }
            Drift::DoubleIntegratorRelative { axes } => {
                if n != 2 * axes || m1 != *axes || m2 != *axes {
                    return Err(structural(format!(
                        "double integrator with {axes} axes needs state dim {} and action dims {axes}",
                        2 * axes
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Jump intensity lambda(x, u1, u2).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpIntensity {
    Zero,
    Constant { rate: f64 },
    /// `rate` where x[dim] > threshold, zero elsewhere.
    Threshold { dim: usize, threshold: f64, rate: f64 },
    /// slope * |x[dim]|.
    AbsLinear { dim: usize, slope: f64 },
    #[serde(skip)]
    Custom(Handle<StateFn>),
}

impl JumpIntensity {
    pub fn eval(&self, x: &[f64], u1: &[f64], u2: &[f64]) -> f64 {
        match self {
            JumpIntensity::Zero => 0.0,
            JumpIntensity::Constant { rate } => *rate,
            JumpIntensity::Threshold { dim, threshold, rate } => {
                if x[*dim] > *threshold {
                    *rate
                } else {
                    0.0
                }
            }
            JumpIntensity::AbsLinear { dim, slope } => slope * x[*dim].abs(),
            JumpIntensity::Custom(h) => (h.f)(x, u1, u2),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, JumpIntensity::Zero)
            || matches!(self, JumpIntensity::Constant { rate } if *rate == 0.0)
    }
}

/// Post-jump kernel Q(. | x, u1, u2).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpKernel {
    Identity,
    ResetTo { point: Vec<f64> },
    UniformBox,
    /// Gaussian kick, clamped back into the state box.
    GaussianKick { std: f64 },
    #[serde(skip)]
    Custom(Handle<KernelFn>),
}

impl JumpKernel {
    pub fn sample(
        &self,
        state_box: &BoxBounds,
        x: &[f64],
        u1: &[f64],
        u2: &[f64],
        rng: &mut SimRng,
        out: &mut [f64],
    ) {
        match self {
            JumpKernel::Identity => out.copy_from_slice(x),
            JumpKernel::ResetTo { point } => out.copy_from_slice(point),
            JumpKernel::UniformBox => out.copy_from_slice(&state_box.sample(rng)),
            JumpKernel::GaussianKick { std } => {
                let normal = Normal::new(0.0, *std).expect("kick std validated");
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi + normal.sample(rng);
                }
                state_box.clamp(out);
            }
            JumpKernel::Custom(h) => (h.f)(x, u1, u2, rng, out),
        }
    }
}

/// Control law Gamma(s, theta) for elapsed time s since the last trigger.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlLaw {
    /// u = theta.
    Constant,
    /// theta = [a, b] split in halves, u = a + b s.
    LinearRamp,
    #[serde(skip)]
    Custom {
        handle: Handle<LawFn>,
        action_dim: usize,
        time_invariant: bool,
    },
}

impl ControlLaw {
    pub fn action_dim(&self, param_dim: usize) -> usize {
        match self {
            ControlLaw::Constant => param_dim,
            ControlLaw::LinearRamp => param_dim / 2,
            ControlLaw::Custom { action_dim, .. } => *action_dim,
        }
    }

    /// True when the action does not depend on elapsed time.
    pub fn time_invariant(&self) -> bool {
        match self {
            ControlLaw::Constant => true,
            ControlLaw::LinearRamp => false,
            ControlLaw::Custom { time_invariant, .. } => *time_invariant,
        }
    }

    pub fn eval(&self, s: f64, theta: &[f64], out: &mut Action) {
        out.clear();
        match self {
            ControlLaw::Constant => out.extend_from_slice(theta),
            ControlLaw::LinearRamp => {
                let m = theta.len() / 2;
                out.extend((0..m).map(|j| theta[j] + theta[m + j] * s));
            }
            ControlLaw::Custom { handle, .. } => (handle.f)(s, theta, out),
        }
    }
}

/// Running cost r(x, u1, u2).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunningCost {
    Zero,
    Constant { value: f64 },
    /// x'Qx + u1'R1u1 + u2'R2u2 + offset. Any block may be indefinite.
    Quadratic { q: Rows, r1: Rows, r2: Rows, offset: f64 },
    #[serde(skip)]
    Custom(Handle<StateFn>),
}

impl RunningCost {
    pub fn eval(&self, x: &[f64], u1: &[f64], u2: &[f64]) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::Constant { value } => *value,
            RunningCost::Quadratic { q, r1, r2, offset } => {
                quad_form(q, x) + quad_form(r1, u1) + quad_form(r2, u2) + offset
            }
            RunningCost::Custom(h) => (h.f)(x, u1, u2),
        }
    }

    fn check(&self, n: usize, m1: usize, m2: usize) -> Result<()> {
        if let RunningCost::Quadratic { q, r1, r2, .. } = self {
            check_shape(q, n, n, "running cost Q")?;
            check_shape(r1, m1, m1, "running cost R1")?;
            check_shape(r2, m2, m2, "running cost R2")?;
        }
        Ok(())
    }
}

/// Trigger cost g(T) for a committed dwell T.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerCost {
    Constant { value: f64 },
    /// sum_k coeffs[k] T^k.
    Polynomial { coeffs: Vec<f64> },
    #[serde(skip)]
    Custom(Handle<DwellFn>),
}

impl TriggerCost {
    pub fn eval(&self, dwell: f64) -> f64 {
        match self {
            TriggerCost::Constant { value } => *value,
            TriggerCost::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * dwell + c)
            }
            TriggerCost::Custom(h) => (h.f)(dwell),
        }
    }
}

/// When the trigger cost of a dwell is discounted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCostTiming {
    /// e^{-gamma t_k} g(T_k): charged at the decision instant.
    #[default]
    AtDecision,
    /// e^{-gamma (t_k + T_k)} g(T_k): charged when the dwell expires.
    AtExpiry,
}

impl TriggerCostTiming {
    /// Discount applied relative to the decision instant.
    pub fn factor(self, discount: f64, dwell: f64) -> f64 {
        match self {
            TriggerCostTiming::AtDecision => 1.0,
            TriggerCostTiming::AtExpiry => (-discount * dwell).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwellBounds {
    pub min: f64,
    pub max: f64,
}

impl DwellBounds {
    pub fn new(min: f64, max: f64) -> Self {
        DwellBounds { min, max }
    }

    pub fn contains(&self, t: f64, tol: f64) -> bool {
        t >= self.min - tol && t <= self.max + tol
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.min, self.max)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlayerSpec {
    pub dwell_bounds: DwellBounds,
    pub param_box: BoxBounds,
    pub control_law: ControlLaw,
    pub running_cost: RunningCost,
    /// Declared bound R_max on |r_i|.
    pub running_cost_bound: f64,
    pub trigger_cost: TriggerCost,
}

impl PlayerSpec {
    pub fn param_dim(&self) -> usize {
        self.param_box.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.control_law.action_dim(self.param_dim())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameSpec {
    pub state_box: BoxBounds,
    pub drift: Drift,
    pub jump_intensity: JumpIntensity,
    /// Declared bound lambda_max used for thinning.
    pub jump_rate_bound: f64,
    pub jump_kernel: JumpKernel,
    pub discount: f64,
    pub players: [PlayerSpec; 2],
    #[serde(default)]
    pub trigger_cost_timing: TriggerCostTiming,
}

/// A failed spot check. Soft: the spec is well formed but refuted.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonPositiveDiscount { discount: f64 },
    NonPositiveDwellLower { player: Player, value: f64 },
    RunningCostBound { player: Player, x: Vec<f64>, value: f64, bound: f64 },
    NegativeIntensity { x: Vec<f64>, value: f64 },
    IntensityAboveBound { x: Vec<f64>, value: f64, bound: f64 },
    KernelOutsideBox { x: Vec<f64>, sample: Vec<f64> },
    NonFiniteDrift { x: Vec<f64> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveDiscount { discount } => {
                write!(f, "discount must be positive (got {discount})")
            }
            Violation::NonPositiveDwellLower { player, value } => {
                write!(f, "dwell lower bound must be positive ({player}: {value})")
            }
            Violation::RunningCostBound { player, x, value, bound } => write!(
                f,
                "running cost of {player} is {value} at x = {x:?}, exceeding the declared bound {bound}"
            ),
            Violation::NegativeIntensity { x, value } => {
                write!(f, "jump intensity {value} is negative at x = {x:?}")
            }
            Violation::IntensityAboveBound { x, value, bound } => write!(
                f,
                "jump intensity {value} at x = {x:?} exceeds the declared bound {bound}"
            ),
            Violation::KernelOutsideBox { x, sample } => write!(
                f,
                "jump kernel at x = {x:?} produced {sample:?} outside the state box"
            ),
            Violation::NonFiniteDrift { x } => write!(f, "drift is not finite at x = {x:?}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
    /// Extra states checked before the random ones.
    pub probes: Vec<Vec<f64>>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { samples: 10_000, seed: 0, probes: Vec::new() }
    }
}

impl GameSpec {
    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn player(&self, p: Player) -> &PlayerSpec {
        &self.players[p.index()]
    }

    pub fn min_dwell(&self) -> f64 {
        self.players[0].dwell_bounds.min.min(self.players[1].dwell_bounds.min)
    }

    /// Fixed RK4 step h = min(0.01, T_min / 20).
    pub fn integrator_step(&self) -> f64 {
        let t = self.min_dwell();
        if t > 0.0 {
            (t / 20.0).min(0.01)
        } else {
            0.01
        }
    }

    pub fn has_jumps(&self) -> bool {
        !self.jump_intensity.is_zero() && self.jump_rate_bound > 0.0
    }

    /// Contraction modulus of the two-step follower operator.
    pub fn contraction_modulus(&self) -> f64 {
        (-self.discount * self.min_dwell()).exp()
    }

    /// Shape checks. Failures here are malformed input, not refutations.
    pub fn check_structure(&self) -> Result<()> {
        self.state_box.check("state box")?;
        let n = self.state_dim();
        if n == 0 {
            return Err(structural("state dimension must be positive"));
        }
        for p in Player::BOTH {
            let ps = self.player(p);
            ps.param_box.check(&format!("parameter box of {p}"))?;
            let db = ps.dwell_bounds;
            if !(db.min.is_finite() && db.max.is_finite()) || db.min > db.max {
                return Err(structural(format!(
                    "dwell bounds of {p}: lower bound {} exceeds upper bound {}",
                    db.min, db.max
                )));
            }
            if matches!(ps.control_law, ControlLaw::LinearRamp) && ps.param_dim() % 2 != 0 {
                return Err(structural(format!(
                    "linear ramp law of {p} needs an even parameter dimension"
                )));
            }
        }
        let (m1, m2) = (self.players[0].action_dim(), self.players[1].action_dim());
        self.drift.check(n, m1, m2)?;
        for ps in &self.players {
            ps.running_cost.check(n, m1, m2)?;
        }
        if let JumpKernel::ResetTo { point } = &self.jump_kernel {
            if point.len() != n {
                return Err(structural("reset point dimension differs from the state dimension"));
            }
        }
        if let JumpKernel::GaussianKick { std } = &self.jump_kernel {
            if !(*std > 0.0 && std.is_finite()) {
                return Err(structural("gaussian kick needs a positive finite std"));
            }
        }
        match &self.jump_intensity {
            JumpIntensity::Threshold { dim, .. } | JumpIntensity::AbsLinear { dim, .. }
                if *dim >= n =>
            {
                return Err(structural(format!("jump intensity reads dimension {dim} of {n}")));
            }
            _ => {}
        }
        if !(self.jump_rate_bound >= 0.0 && self.jump_rate_bound.is_finite()) {
            return Err(structural("jump rate bound must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<Vec<Violation>> {
        self.validate_with(&ValidationOptions::default())
    }

    /// Randomized spot checks. Returns at most one violation of each kind
    /// (per player where relevant); probes are examined first.
    pub fn validate_with(&self, opts: &ValidationOptions) -> Result<Vec<Violation>> {
        self.check_structure()?;
        let mut out = Vec::new();
        if !(self.discount > 0.0) {
            out.push(Violation::NonPositiveDiscount { discount: self.discount });
        }
        for p in Player::BOTH {
            let v = self.player(p).dwell_bounds.min;
            if !(v > 0.0) {
                out.push(Violation::NonPositiveDwellLower { player: p, value: v });
            }
        }

        let mut rng = rng::seeded(rng::substream(opts.seed, "validate"));
        let n = self.state_dim();
        let mut f = vec![0.0; n];
        let mut post = vec![0.0; n];
        let mut u = [Action::new(), Action::new()];
        let mut seen = [false; 7];
        let total = opts.probes.len() + opts.samples;
        for k in 0..total {
            let x = if k < opts.probes.len() {
                let mut x = opts.probes[k].clone();
                if x.len() != n {
                    return Err(structural("validation probe has the wrong dimension"));
                }
                self.state_box.clamp(&mut x);
                x
            } else {
                self.state_box.sample(&mut rng)
            };
            for p in Player::BOTH {
                let ps = self.player(p);
                let theta = ps.param_box.sample(&mut rng);
                let s = if ps.dwell_bounds.max > 0.0 {
                    rng.random_range(0.0..=ps.dwell_bounds.max)
                } else {
                    0.0
                };
                ps.control_law.eval(s, &theta, &mut u[p.index()]);
            }
            for p in Player::BOTH {
                let slot = p.index();
                if seen[slot] {
                    continue;
                }
                let ps = self.player(p);
                let r = ps.running_cost.eval(&x, &u[0], &u[1]);
                if !(r.abs() <= ps.running_cost_bound) {
                    seen[slot] = true;
                    out.push(Violation::RunningCostBound {
                        player: p,
                        x: x.clone(),
                        value: r,
                        bound: ps.running_cost_bound,
                    });
                }
            }
            let lam = self.jump_intensity.eval(&x, &u[0], &u[1]);
            if !seen[2] && !(lam >= 0.0) {
                seen[2] = true;
                out.push(Violation::NegativeIntensity { x: x.clone(), value: lam });
            }
            if !seen[3] && lam > self.jump_rate_bound {
                seen[3] = true;
                out.push(Violation::IntensityAboveBound {
                    x: x.clone(),
                    value: lam,
                    bound: self.jump_rate_bound,
                });
            }
            if !seen[4] {
                self.jump_kernel.sample(&self.state_box, &x, &u[0], &u[1], &mut rng, &mut post);
                if !self.state_box.contains(&post, 1e-12) {
                    seen[4] = true;
                    out.push(Violation::KernelOutsideBox { x: x.clone(), sample: post.clone() });
                }
            }
            if !seen[5] {
                self.drift.eval(&x, &u[0], &u[1], &mut f);
                if f.iter().any(|v| !v.is_finite()) {
                    seen[5] = true;
                    out.push(Violation::NonFiniteDrift { x: x.clone() });
                }
            }
        }
        Ok(out)
    }

    /// Errors unless both control laws ignore elapsed time. The grid solvers
    /// need this because the augmented state does not record elapsed time.
    pub fn require_time_invariant(&self) -> Result<()> {
        for p in Player::BOTH {
            if !self.player(p).control_law.time_invariant() {
                return Err(Error::Precondition(format!(
                    "the control law of {p} depends on elapsed time; grid solvers need time-invariant laws"
                )));
            }
        }
        Ok(())
    }
}

/// chi = (x, sigma_1, theta_1, sigma_2, theta_2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub sigma: [f64; 2],
    pub theta: [Vec<f64>; 2],
}

impl AugmentedState {
    pub fn new(x: Vec<f64>, sigma1: f64, theta1: Vec<f64>, sigma2: f64, theta2: Vec<f64>) -> Self {
        AugmentedState { x, sigma: [sigma1, sigma2], theta: [theta1, theta2] }
    }

    /// Validity against a spec, with a tolerance on the boxes and clocks.
    pub fn check(&self, spec: &GameSpec, tol: f64) -> Result<()> {
        if !spec.state_box.contains(&self.x, tol) {
            return Err(Error::Domain(format!("state {:?} outside the state box", self.x)));
        }
        for p in Player::BOTH {
            let ps = spec.player(p);
            let s = self.sigma[p.index()];
            if !(s >= -tol && s <= ps.dwell_bounds.max + tol) {
                return Err(Error::Domain(format!("clock of {p} is {s}, outside [0, T_max]")));
            }
            if !ps.param_box.contains(&self.theta[p.index()], tol) {
                return Err(Error::Domain(format!("held parameter of {p} outside its box")));
            }
        }
        Ok(())
    }
}

/// Gamma_i(elapsed, theta); domain error outside [0, T_max].
pub fn held_control(player: &PlayerSpec, elapsed: f64, theta: &[f64]) -> Result<Action> {
    if !(elapsed >= 0.0 && elapsed <= player.dwell_bounds.max) {
        return Err(Error::Domain(format!(
            "elapsed time {elapsed} outside [0, {}]",
            player.dwell_bounds.max
        )));
    }
    let mut out = Action::new();
    player.control_law.eval(elapsed, theta, &mut out);
    Ok(out)
}

/// tau(chi) = min(sigma_1, sigma_2).
pub fn time_to_boundary(chi: &AugmentedState) -> f64 {
    chi.sigma[0].min(chi.sigma[1])
}
