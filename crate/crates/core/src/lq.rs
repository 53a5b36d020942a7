//! Pursuit-evasion on a relative double integrator with held accelerations,
//! the continuous LQ Nash feedback baseline, trajectory comparison and the
//! dwell sensitivity sweep.
//!
//! The pursuer is player one and the evader player two. The state is
//! z = [p - e, v_p - v_e].

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::model::*;
use crate::sim::{Policy, Simulator, Trajectory};

fn to_mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let (n, m) = (rows.len(), rows.first().map_or(0, Vec::len));
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    to_rows(&DMatrix::identity(n, n))
}

fn check_symmetric(m: &[Vec<f64>], n: usize, what: &str, definite: bool) -> Result<()> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(structural(format!("{what} must be {n} x {n}")));
    }
    let a = to_mat(m);
    if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
        return Err(structural(format!("{what} must be symmetric")));
    }
    let min = a.symmetric_eigenvalues().min();
    let ok = if definite { min > 0.0 } else { min >= -1e-12 * (1.0 + a.amax()) };
    if !ok {
        let kind = if definite { "positive definite" } else { "positive semidefinite" };
        return Err(structural(format!("{what} must be {kind}, smallest eigenvalue {min}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LQPursuitConfig {
    /// Number of position axes; the state has twice as many coordinates.
    #[serde(default = "default_axes")]
    pub axes: usize,
    pub z0: Vec<f64>,
    pub q_state: Vec<Vec<f64>>,
    pub r1: Vec<Vec<f64>>,
    pub r2: Vec<Vec<f64>>,
    /// Constant trigger costs.
    pub kappa: [f64; 2],
    pub dwell: [DwellBounds; 2],
    /// Half-widths of the acceleration boxes.
    pub accel: [f64; 2],
    /// Half-widths of the state box, positions then velocities.
    pub state_half_width: Vec<f64>,
    #[serde(default = "default_capture")]
    pub capture_radius: f64,
    pub discount: f64,
    /// Evader pays exactly the negative of the pursuer's cost.
    #[serde(default)]
    pub zero_sum: bool,
}

fn default_axes() -> usize {
    2
}

fn default_capture() -> f64 {
    0.1
}

impl LQPursuitConfig {
    /// Desk-scale instance: Q = R = I, discount 0.5, trigger cost 0.05,
    /// unit acceleration boxes and dwell in [0.1, 0.3].
    pub fn desk() -> Self {
        LQPursuitConfig {
            axes: 2,
            z0: vec![1.0, 0.5, 0.0, 0.0],
            q_state: identity(4),
            r1: identity(2),
            r2: identity(2),
            kappa: [0.05, 0.05],
            dwell: [DwellBounds::new(0.1, 0.3); 2],
            accel: [1.0, 1.0],
            state_half_width: vec![1.5, 1.5, 1.0, 1.0],
            capture_radius: 0.1,
            discount: 0.5,
            zero_sum: false,
        }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.axes
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        if self.axes == 0 {
            return Err(structural("at least one axis is needed"));
        }
        if self.z0.len() != n || self.state_half_width.len() != n {
            return Err(structural(format!("z0 and the state box need {n} entries")));
        }
        check_symmetric(&self.q_state, n, "Q_state", false)?;
        check_symmetric(&self.r1, self.axes, "R_1", true)?;
        check_symmetric(&self.r2, self.axes, "R_2", true)?;
        if !(self.capture_radius > 0.0) {
            return Err(structural("capture radius must be positive"));
        }
        if self.kappa.iter().any(|k| !(*k >= 0.0)) || self.accel.iter().any(|a| !(*a >= 0.0)) {
            return Err(structural("trigger costs and acceleration bounds must be non-negative"));
        }
        if self.state_half_width.iter().any(|w| !(*w > 0.0)) {
            return Err(structural("state box half-widths must be positive"));
        }
        if !(self.discount >= 0.0) {
            return Err(structural("discount must be non-negative"));
        }
        Ok(())
    }

    /// Running cost matrices (Q, R on u1, R on u2) for each player.
    fn cost_blocks(&self) -> [(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>); 2] {
        let neg = |m: &[Vec<f64>]| m.iter().map(|r| r.iter().map(|v| -v).collect()).collect::<Vec<Vec<f64>>>();
        let zero = vec![vec![0.0; self.axes]; self.axes];
        if self.zero_sum {
            // pursuer: z'Qz + u1'R1u1 - u2'R2u2, evader the negative
            [
                (self.q_state.clone(), self.r1.clone(), neg(&self.r2)),
                (neg(&self.q_state), neg(&self.r1), self.r2.clone()),
            ]
        } else {
            [(self.q_state.clone(), self.r1.clone(), zero.clone()), (neg(&self.q_state), zero, self.r2.clone())]
        }
    }

    /// The game as an explicit linear-quadratic instance.
    pub fn linear_quadratic(&self) -> LinearQuadraticGame {
        let n = self.state_dim();
        let k = self.axes;
        let a = DMatrix::from_fn(n, n, |i, j| if i < k && j == i + k { 1.0 } else { 0.0 });
        let b1 = DMatrix::from_fn(n, k, |i, j| if i == j + k { 1.0 } else { 0.0 });
        let [c1, c2] = self.cost_blocks();
        LinearQuadraticGame {
            a: to_rows(&a),
            b: [to_rows(&b1), to_rows(&(-b1))],
            q: [c1.0, c2.0],
            r: [c1.1, c2.2],
            r_other: [c1.2, c2.1],
            discount: self.discount,
        }
    }
}

fn box_sup_sq(half: &[f64]) -> f64 {
    half.iter().map(|h| h * h).sum()
}

fn spectral_bound(m: &[Vec<f64>]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    to_mat(m).singular_values().max()
}

pub fn build_game(cfg: &LQPursuitConfig) -> Result<GameSpec> {
    cfg.validate()?;
    let k = cfg.axes;
    let blocks = cfg.cost_blocks();
    let zsq = box_sup_sq(&cfg.state_half_width);
    let usq = [cfg.accel[0].powi(2) * k as f64, cfg.accel[1].powi(2) * k as f64];
    let player = |i: usize| {
        let (q, r1, r2) = blocks[i].clone();
        let bound = spectral_bound(&q) * zsq + spectral_bound(&r1) * usq[0] + spectral_bound(&r2) * usq[1];
        PlayerSpec {
            dwell_bounds: cfg.dwell[i],
            param_box: BoxBounds::symmetric(k, cfg.accel[i]),
            control_law: ControlLaw::Constant,
            running_cost: RunningCost::Quadratic { q, r1, r2, offset: 0.0 },
            running_cost_bound: bound,
            trigger_cost: TriggerCost::Constant { value: cfg.kappa[i] },
        }
    };
    let upper = cfg.state_half_width.clone();
    let lower = upper.iter().map(|v| -v).collect();
    Ok(GameSpec {
        state_box: BoxBounds::new(lower, upper),
        drift: Drift::DoubleIntegratorRelative { axes: k },
        jump_intensity: JumpIntensity::Zero,
        jump_rate_bound: 0.0,
        jump_kernel: JumpKernel::Identity,
        discount: cfg.discount,
        players: [player(0), player(1)],
        trigger_cost_timing: TriggerCostTiming::AtDecision,
    })
}

/// One-dimensional variant: x' = u1 - u2 with r1 = q x^2 + r1 u1^2 and
/// r2 = -q x^2 + r2 u2^2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarPursuitConfig {
    pub q: f64,
    pub r: [f64; 2],
    pub kappa: [f64; 2],
    pub dwell: [DwellBounds; 2],
    pub accel: [f64; 2],
    pub half_width: f64,
    pub discount: f64,
}

impl ScalarPursuitConfig {
    pub fn desk() -> Self {
        ScalarPursuitConfig {
            q: 1.0,
            r: [0.5, 0.5],
            kappa: [0.05, 0.05],
            dwell: [DwellBounds::new(0.2, 0.6); 2],
            accel: [1.0, 0.5],
            half_width: 1.0,
            discount: 0.5,
        }
    }
}

pub fn build_scalar_game(cfg: &ScalarPursuitConfig) -> Result<GameSpec> {
    if !(cfg.half_width > 0.0) || cfg.r.iter().any(|r| !(*r > 0.0)) || !(cfg.q >= 0.0) {
        return Err(structural("scalar pursuit needs q >= 0, r > 0 and a positive half-width"));
    }
    let w2 = cfg.half_width.powi(2);
    let player = |i: usize| {
        let s = if i == 0 { 1.0 } else { -1.0 };
        let (r1, r2) = if i == 0 { (cfg.r[0], 0.0) } else { (0.0, cfg.r[1]) };
        PlayerSpec {
            dwell_bounds: cfg.dwell[i],
            param_box: BoxBounds::symmetric(1, cfg.accel[i]),
            control_law: ControlLaw::Constant,
            running_cost: RunningCost::Quadratic {
                q: vec![vec![s * cfg.q]],
                r1: vec![vec![r1]],
                r2: vec![vec![r2]],
                offset: 0.0,
            },
            running_cost_bound: cfg.q * w2 + cfg.r[i] * cfg.accel[i].powi(2),
            trigger_cost: TriggerCost::Constant { value: cfg.kappa[i] },
        }
    };
    Ok(GameSpec {
        state_box: BoxBounds::symmetric(1, cfg.half_width),
        drift: Drift::Linear { a: vec![vec![0.0]], b1: vec![vec![1.0]], b2: vec![vec![-1.0]] },
        jump_intensity: JumpIntensity::Zero,
        jump_rate_bound: 0.0,
        jump_kernel: JumpKernel::Identity,
        discount: cfg.discount,
        players: [player(0), player(1)],
        trigger_cost_timing: TriggerCostTiming::AtDecision,
    })
}

/// z' = A z + B1 u1 + B2 u2 with player i minimizing the discounted
/// integral of z'Q_i z + u_i'R_i u_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQuadraticGame {
    pub a: Vec<Vec<f64>>,
    pub b: [Vec<Vec<f64>>; 2],
    pub q: [Vec<Vec<f64>>; 2],
    pub r: [Vec<Vec<f64>>; 2],
    /// Weight on the opponent's control in each player's cost; empty means zero.
    #[serde(default)]
    pub r_other: [Vec<Vec<f64>>; 2],
    pub discount: f64,
}

impl LinearQuadraticGame {
    fn check(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 || self.a.iter().any(|r| r.len() != n) {
            return Err(structural("A must be square and non-empty"));
        }
        for i in 0..2 {
            let m = self.b[i].first().map_or(0, Vec::len);
            if self.b[i].len() != n || self.b[i].iter().any(|r| r.len() != m) {
                return Err(structural(format!("B_{} must have {n} rows", i + 1)));
            }
            if self.q[i].len() != n || self.q[i].iter().any(|r| r.len() != n) {
                return Err(structural(format!("Q_{} must be {n} x {n}", i + 1)));
            }
            if m > 0 {
                check_symmetric(&self.r[i], m, &format!("R_{}", i + 1), true)?;
            }
        }
        if !(self.discount >= 0.0) {
            return Err(structural("discount must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    /// P_i per player; the pursuer's value is z'P_1 z.
    pub p: [Vec<Vec<f64>>; 2],
    /// Feedback gains, u_i = -K_i z.
    pub k: [Vec<Vec<f64>>; 2],
    /// Max-abs residual of each coupled equation at the returned pair.
    pub residuals: [f64; 2],
    /// Largest gain change per sweep.
    pub gain_changes: Vec<f64>,
    /// Real parts of the shifted closed-loop eigenvalues.
    pub closed_loop_real_parts: Vec<f64>,
    pub hurwitz: bool,
}

impl RiccatiSolution {
    pub fn value(&self, player: Player, z: &[f64]) -> f64 {
        let p = to_mat(&self.p[player.index()]);
        let z = DVector::from_column_slice(z);
        (z.transpose() * p * &z)[(0, 0)]
    }

    pub fn control(&self, player: Player, z: &[f64]) -> Vec<f64> {
        let k = to_mat(&self.k[player.index()]);
        (-(k * DVector::from_column_slice(z))).iter().copied().collect()
    }
}

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_SWEEPS: usize = 500;

fn are_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a + q - p * s * p
}

/// Solves M'X + XM = -C by vectorization.
fn lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    let op = id.kronecker(&mt) + mt.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, (-c).iter().copied());
    let x = op.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Stabilizing solution of A'P + PA + Q - PSP = 0: matrix sign function of
/// the Hamiltonian, least squares for P, then Newton refinement.
pub fn solve_are(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut z = h;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu.try_inverse().ok_or_else(|| {
            Error::Numerical("Hamiltonian has eigenvalues on the imaginary axis".into())
        })?;
        let c = det.abs().powf(-1.0 / (2 * n) as f64);
        let c = if c.is_finite() && c > 0.0 { c } else { 1.0 };
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).amax();
        z = next;
        if change <= 1e-13 * z.amax().max(1.0) {
            break;
        }
    }
    let w = z;
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + DMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let mut p = lhs.svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
    p = (&p + p.transpose()) * 0.5;
    for _ in 0..20 {
        let res = are_residual(a, s, q, &p);
        if res.amax() < 1e-14 * (1.0 + p.amax()) {
            break;
        }
        let m = a - s * &p;
        let dp = lyapunov(&m, &res)?;
        p += dp;
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Riccati solution".into()));
    }
    Ok(p)
}

/// Feedback Nash pair of the discounted LQ game: each player's Riccati
/// equation in turn against the other's frozen gain, on the shifted system
/// A - (discount / 2) I, until the gains move less than 1e-10.
pub fn coupled_riccati(game: &LinearQuadraticGame) -> Result<RiccatiSolution> {
    game.check()?;
    let n = game.a.len();
    let ag = to_mat(&game.a) - DMatrix::identity(n, n) * (game.discount / 2.0);
    let b = [to_mat(&game.b[0]), to_mat(&game.b[1])];
    let q = [to_mat(&game.q[0]), to_mat(&game.q[1])];
    let mut s = Vec::new();
    let mut rinv_bt = Vec::new();
    for i in 0..2 {
        let m = b[i].ncols();
        if m == 0 {
            s.push(DMatrix::zeros(n, n));
            rinv_bt.push(DMatrix::zeros(0, n));
            continue;
        }
        let rinv = to_mat(&game.r[i]).try_inverse().ok_or_else(|| structural("R must be invertible"))?;
        s.push(&b[i] * &rinv * b[i].transpose());
        rinv_bt.push(rinv * b[i].transpose());
    }
    let r_other = [0, 1].map(|i| {
        let m = b[1 - i].ncols();
        if game.r_other[i].is_empty() { DMatrix::zeros(m, m) } else { to_mat(&game.r_other[i]) }
    });
    if (0..2).any(|i| r_other[i].shape() != (b[1 - i].ncols(), b[1 - i].ncols())) {
        return Err(structural("opponent control weights must match the opponent's input size"));
    }
    // state weight seen by player i with the opponent's gain frozen
    let q_eff = |i: usize, kj: &DMatrix<f64>| &q[i] + kj.transpose() * &r_other[i] * kj;
    let mut k = [DMatrix::zeros(b[0].ncols(), n), DMatrix::zeros(b[1].ncols(), n)];
    let mut p = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    let mut changes = Vec::new();
    let mut converged = false;
    for _ in 0..RICCATI_MAX_SWEEPS {
        let mut change = 0.0f64;
        for i in 0..2 {
            let j = 1 - i;
            let ai = &ag - &b[j] * &k[j];
            p[i] = solve_are(&ai, &s[i], &q_eff(i, &k[j]))?;
            let ki = &rinv_bt[i] * &p[i];
            change = change.max((&ki - &k[i]).amax());
            k[i] = ki;
        }
        changes.push(change);
        if !change.is_finite() {
            break;
        }
        if change < RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged(format!(
            "coupled Riccati iteration stopped after {} sweeps; gain changes {:?}",
            changes.len(),
            &changes[changes.len().saturating_sub(10)..]
        )));
    }
    let residuals = [0, 1].map(|i| {
        let ai = &ag - &b[1 - i] * &k[1 - i];
        are_residual(&ai, &s[i], &q_eff(i, &k[1 - i]), &p[i]).amax()
    });
    let cl = &ag - &b[0] * &k[0] - &b[1] * &k[1];
    let real: Vec<f64> = cl.complex_eigenvalues().iter().map(|c| c.re).collect();
    let hurwitz = real.iter().all(|r| *r < 0.0);
    Ok(RiccatiSolution {
        p: [to_rows(&p[0]), to_rows(&p[1])],
        k: [to_rows(&k[0]), to_rows(&k[1])],
        residuals,
        gain_changes: changes,
        closed_loop_real_parts: real,
        hurwitz,
    })
}

pub fn riccati_baseline(cfg: &LQPursuitConfig) -> Result<RiccatiSolution> {
    cfg.validate()?;
    coupled_riccati(&cfg.linear_quadratic())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSample {
    pub t: f64,
    pub z: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

/// Closed loop u_i = -K_i z with no box and no triggers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousRun {
    pub samples: Vec<ContinuousSample>,
    pub discounted_cost: [f64; 2],
    pub capture_time: Option<f64>,
}

fn position_error(z: &[f64], axes: usize) -> f64 {
    z[..axes].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// RK4 on (z, c1, c2) with step `dt`, sampling every `every` steps.
pub fn continuous_rollout(
    game: &LinearQuadraticGame,
    sol: &RiccatiSolution,
    z0: &[f64],
    t_max: f64,
    dt: f64,
    capture: Option<(usize, f64)>,
    every: usize,
) -> Result<ContinuousRun> {
    let n = game.a.len();
    if z0.len() != n || !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Domain("continuous rollout needs a state of the right size and positive step".into()));
    }
    let a = to_mat(&game.a);
    let b = [to_mat(&game.b[0]), to_mat(&game.b[1])];
    let k = [to_mat(&sol.k[0]), to_mat(&sol.k[1])];
    let q = [to_mat(&game.q[0]), to_mat(&game.q[1])];
    let r = [to_mat(&game.r[0]), to_mat(&game.r[1])];
    let cl = &a - &b[0] * &k[0] - &b[1] * &k[1];
    let cost_w = [0, 1].map(|i| {
        let mut w = &q[i] + k[i].transpose() * &r[i] * &k[i];
        if !game.r_other[i].is_empty() {
            w += k[1 - i].transpose() * to_mat(&game.r_other[i]) * &k[1 - i];
        }
        w
    });
    let gamma = game.discount;
    let rhs = |t: f64, y: &DVector<f64>| -> DVector<f64> {
        let z = y.rows(0, n).into_owned();
        let mut out = DVector::zeros(n + 2);
        out.rows_mut(0, n).copy_from(&(&cl * &z));
        let w = (-gamma * t).exp();
        for i in 0..2 {
            out[n + i] = w * (z.transpose() * &cost_w[i] * &z)[(0, 0)];
        }
        out
    };
    let sample = |t: f64, z: &[f64]| ContinuousSample {
        t,
        z: z.to_vec(),
        u1: sol.control(Player::One, z),
        u2: sol.control(Player::Two, z),
    };
    let steps = (t_max / dt).ceil() as usize;
    let h = if steps > 0 { t_max / steps as f64 } else { 0.0 };
    let mut y = DVector::zeros(n + 2);
    y.rows_mut(0, n).copy_from_slice(z0);
    let mut samples = vec![sample(0.0, z0)];
    let mut capture_time = capture.and_then(|(ax, rad)| (position_error(z0, ax) <= rad).then_some(0.0));
    for j in 0..steps {
        let t = j as f64 * h;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + h / 2.0, &(&y + &k1 * (h / 2.0)));
        let k3 = rhs(t + h / 2.0, &(&y + &k2 * (h / 2.0)));
        let k4 = rhs(t + h, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let z: Vec<f64> = y.rows(0, n).iter().copied().collect();
        if let (None, Some((ax, rad))) = (capture_time, capture) {
            if position_error(&z, ax) <= rad {
                capture_time = Some(t + h);
            }
        }
        if (j + 1) % every.max(1) == 0 || j + 1 == steps {
            samples.push(sample(t + h, &z));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("continuous closed loop blew up".into()));
    }
    Ok(ContinuousRun { samples, discounted_cost: [y[n], y[n + 1]], capture_time })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub z0: Vec<f64>,
    pub t_max: f64,
    pub seed: u64,
    pub baseline: ContinuousRun,
    pub triggered: Trajectory,
    pub baseline_capture_time: Option<f64>,
    pub triggered_capture_time: Option<f64>,
    pub baseline_cost: [f64; 2],
    pub triggered_cost: [f64; 2],
    pub trigger_counts: [usize; 2],
}

impl ComparisonReport {
    /// Writes `report.json`, `baseline.csv`, `triggered.csv` and `events.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let report = dir.join("report.json");
        serde_json::to_writer_pretty(std::fs::File::create(&report)?, self)?;
        let base = dir.join("baseline.csv");
        let mut w = csv::Writer::from_path(&base)?;
        let n = self.z0.len();
        let m = self.baseline.samples.first().map_or(0, |s| s.u1.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("z{i}")));
        header.extend((0..m).map(|i| format!("u1_{i}")));
        header.extend((0..m).map(|i| format!("u2_{i}")));
        w.write_record(&header)?;
        for s in &self.baseline.samples {
            let row = std::iter::once(s.t).chain(s.z.iter().copied()).chain(s.u1.iter().copied()).chain(s.u2.iter().copied());
            w.write_record(row.map(|v| v.to_string()))?;
        }
        w.flush()?;
        let trig = dir.join("triggered.csv");
        self.triggered.write_csv(std::fs::File::create(&trig)?)?;
        let events = dir.join("events.csv");
        let mut w = csv::Writer::from_path(&events)?;
        w.write_record(["t", "player", "simultaneous", "dwell", "param", "cost"])?;
        for e in &self.triggered.events {
            let param = e.param.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([
                e.t.to_string(),
                (e.player.index() + 1).to_string(),
                e.simultaneous.to_string(),
                e.dwell.to_string(),
                param,
                e.cost.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(vec![report, base, trig, events])
    }
}

/// Rolls out the continuous baseline and the self-triggered pair from z0.
/// Both players start with expired clocks.
pub fn run_comparison(
    cfg: &LQPursuitConfig,
    baseline: &RiccatiSolution,
    pursuer: &dyn Policy,
    evader: &dyn Policy,
    t_max: f64,
    seed: u64,
) -> Result<ComparisonReport> {
    let spec = build_game(cfg)?;
    let game = cfg.linear_quadratic();
    let h = spec.integrator_step();
    let every = ((0.05 / h).round() as usize).max(1);
    let capture = Some((cfg.axes, cfg.capture_radius));
    let base = continuous_rollout(&game, baseline, &cfg.z0, t_max, h, capture, every)?;
    let k = cfg.axes;
    let chi0 = AugmentedState::new(cfg.z0.clone(), 0.0, vec![0.0; k], 0.0, vec![0.0; k]);
    let mut sim = Simulator::new(&spec, chi0, [pursuer, evader], seed)?.dense(true);
    sim.run_until(t_max)?;
    let traj = sim.into_trajectory();
    let triggered_capture_time =
        traj.samples.iter().find(|s| position_error(&s.state.x, k) <= cfg.capture_radius).map(|s| s.t);
    let counts = [Player::One, Player::Two].map(|p| traj.events.iter().filter(|e| e.player == p).count());
    Ok(ComparisonReport {
        z0: cfg.z0.clone(),
        t_max,
        seed,
        baseline_capture_time: base.capture_time,
        baseline_cost: base.discounted_cost,
        baseline: base,
        triggered_capture_time,
        triggered_cost: [traj.total_cost(Player::One), traj.total_cost(Player::Two)],
        trigger_counts: counts,
        triggered: traj,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub sigma_opp: f64,
    pub distance: f64,
    pub dwell: f64,
    pub control_norm: f64,
}

/// Evaluates `policy` (owned by `owner`) over a grid of opponent clocks and
/// position errors. The position error points along `direction`; the other
/// coordinates come from `base`, and the owner's clock is set to zero.
pub fn policy_sensitivity_sweep(
    policy: &(dyn Policy + Sync),
    owner: Player,
    base: &AugmentedState,
    axes: usize,
    direction: &[f64],
    sigma_opp: &[f64],
    distances: &[f64],
) -> Result<Vec<SensitivityRow>> {
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if direction.len() != axes || !(norm > 0.0) || base.x.len() < axes {
        return Err(Error::Domain("sweep direction must be a non-zero vector over the position axes".into()));
    }
    let points: Vec<(f64, f64)> =
        sigma_opp.iter().flat_map(|&s| distances.iter().map(move |&d| (s, d))).collect();
    points
        .par_iter()
        .map(|&(s, d)| {
            let mut chi = base.clone();
            for (j, v) in direction.iter().enumerate() {
                chi.x[j] = d * v / norm;
            }
            chi.sigma[owner.index()] = 0.0;
            chi.sigma[owner.other().index()] = s;
            let dec = policy.decide(&chi)?;
            let control_norm = dec.param.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(SensitivityRow { sigma_opp: s, distance: d, dwell: dec.dwell, control_norm })
        })
        .collect()
}

pub fn write_sensitivity_csv<W: Write>(rows: &[SensitivityRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma_opp", "distance", "dwell", "control_norm"])?;
    for r in rows {
        w.write_record([r.sigma_opp, r.distance, r.dwell, r.control_norm].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
