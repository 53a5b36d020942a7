//! Leader optimization: a smooth parameterized trigger policy for the leader,
//! its objective against the follower's fixed-point response, and the
//! hypergradient through that fixed point by implicit differentiation.
//!
//! Differentiation runs on a smoothed problem: the follower's minimum over
//! candidates becomes a log-sum-exp soft minimum in its operator, the
//! follower responds with the matching softmax mixture, and the leader's
//! objective is its grid value under that response. Rollout costs are
//! discontinuous in the weights whenever two triggers swap order, so they
//! serve for evaluation only.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::follower::{
    boundary_decisions, FixedPointReport, MinMode, OperatorOptions, ResponseWeights, StackelbergOperator,
    TriggerPolicy,
};
use crate::grid::{GridSpec, ValueGrid};
use crate::model::{AugmentedState, BoxBounds, DwellBounds, GameSpec, Player};
use crate::rng;
use crate::sim::{Decision, Policy, Simulator};

/// A scalar feature of the augmented state, seen from the head's owner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    Bias,
    State { index: usize },
    /// The opponent's residual clock.
    OppClock,
    OppParam { index: usize },
    /// Euclidean norm of the listed state coordinates.
    Norm { dims: Vec<usize> },
}

impl Feature {
    pub fn eval(&self, chi: &AugmentedState, owner: Player) -> f64 {
        let opp = owner.other().index();
        match self {
            Feature::Bias => 1.0,
            Feature::State { index } => chi.x[*index],
            Feature::OppClock => chi.sigma[opp],
            Feature::OppParam { index } => chi.theta[opp][*index],
            Feature::Norm { dims } => dims.iter().map(|d| chi.x[*d].powi(2)).sum::<f64>().sqrt(),
        }
    }

    fn check(&self, spec: &GameSpec, owner: Player) -> Result<()> {
        let n = spec.state_dim();
        let ok = match self {
            Feature::Bias | Feature::OppClock => true,
            Feature::State { index } => *index < n,
            Feature::OppParam { index } => *index < spec.player(owner.other()).param_dim(),
            Feature::Norm { dims } => !dims.is_empty() && dims.iter().all(|d| *d < n),
        };
        if ok {
            Ok(())
        } else {
            Err(structural(format!("feature {self:?} does not fit the game")))
        }
    }
}

/// Maps features to a decision with bounds respected by construction:
///
/// dwell = T_min + (T_max - T_min) sigmoid(xi_d . phi)
/// param = c + h * tanh((xi_g . psi) (M x) / h)
///
/// where c and h are the center and half-widths of the parameter box. The
/// weight vector is `[xi_d, xi_g]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHead {
    pub owner: Player,
    pub dwell_features: Vec<Feature>,
    pub gain_features: Vec<Feature>,
    /// Rows map the state into parameter space.
    pub param_map: Vec<Vec<f64>>,
    pub dwell_bounds: DwellBounds,
    pub param_box: BoxBounds,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl PolicyHead {
    pub fn new(
        spec: &GameSpec,
        owner: Player,
        dwell_features: Vec<Feature>,
        gain_features: Vec<Feature>,
        param_map: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ps = spec.player(owner);
        for f in dwell_features.iter().chain(&gain_features) {
            f.check(spec, owner)?;
        }
        if param_map.len() != ps.param_dim() || param_map.iter().any(|r| r.len() != spec.state_dim()) {
            return Err(structural(format!(
                "parameter map must be {} x {}",
                ps.param_dim(),
                spec.state_dim()
            )));
        }
        Ok(PolicyHead {
            owner,
            dwell_features,
            gain_features,
            param_map,
            dwell_bounds: ps.dwell_bounds,
            param_box: ps.param_box.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dwell_features.len() + self.gain_features.len()
    }

    /// Pre-activation giving `dwell` under a bias-only dwell head.
    pub fn dwell_logit(&self, dwell: f64) -> f64 {
        let b = self.dwell_bounds;
        let s = ((dwell - b.min) / (b.max - b.min)).clamp(1e-12, 1.0 - 1e-12);
        (s / (1.0 - s)).ln()
    }

    pub fn decide(&self, xi: &[f64], chi: &AugmentedState) -> Decision {
        let nd = self.dwell_features.len();
        let zd: f64 = self.dwell_features.iter().zip(xi).map(|(f, w)| w * f.eval(chi, self.owner)).sum();
        let b = self.dwell_bounds;
        let dwell = b.min + (b.max - b.min) * sigmoid(zd);
        let gain: f64 =
            self.gain_features.iter().zip(&xi[nd..]).map(|(f, w)| w * f.eval(chi, self.owner)).sum();
        let c = self.param_box.center();
        let h = self.param_box.half_width();
        let param = self
            .param_map
            .iter()
            .enumerate()
            .map(|(j, row)| {
                if h[j] <= 0.0 {
                    return c[j];
                }
                let mx: f64 = row.iter().zip(&chi.x).map(|(m, x)| m * x).sum();
                c[j] + h[j] * (gain * mx / h[j]).tanh()
            })
            .collect();
        Decision::new(dwell, param)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderParams {
    pub xi: Vec<f64>,
}

/// A policy head at fixed weights.
#[derive(Clone, Debug)]
pub struct LeaderPolicy {
    pub head: Arc<PolicyHead>,
    pub xi: Vec<f64>,
}

impl LeaderPolicy {
    pub fn new(head: Arc<PolicyHead>, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != head.dim() {
            return Err(structural(format!("head has {} weights, got {}", head.dim(), xi.len())));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite leader weights".into()));
        }
        Ok(LeaderPolicy { head, xi })
    }

    fn shifted(&self, i: usize, h: f64) -> LeaderPolicy {
        let mut xi = self.xi.clone();
        xi[i] += h;
        LeaderPolicy { head: self.head.clone(), xi }
    }
}

impl Policy for LeaderPolicy {
    fn decide(&self, chi: &AugmentedState) -> Result<Decision> {
        Ok(self.head.decide(&self.xi, chi))
    }
}

/// Initial states and rollout budget for the leader's objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub chi0: Vec<AugmentedState>,
    pub n_rollouts: usize,
    pub t_max: f64,
    pub seed: u64,
}

fn rollout_seed(seed: u64, k: usize, r: usize) -> u64 {
    rng::derive(rng::derive(rng::substream(seed, "objective"), k as u64), r as u64)
}

fn run_total(sim: &mut Simulator, t_end: f64, p: Player) -> Result<f64> {
    sim.run_until(t_end)?;
    Ok(sim.trajectory().total_cost(p))
}

/// Mean discounted cost of `player` over the configured rollouts.
fn mean_cost(spec: &GameSpec, policies: [&dyn Policy; 2], player: Player, cfg: &ObjectiveConfig) -> Result<f64> {
    if cfg.chi0.is_empty() || cfg.n_rollouts == 0 {
        return Err(Error::Precondition("objective needs initial states and rollouts".into()));
    }
    let pairs: Vec<(usize, usize)> =
        (0..cfg.chi0.len()).flat_map(|k| (0..cfg.n_rollouts).map(move |r| (k, r))).collect();
    let costs: Vec<f64> = pairs
        .par_iter()
        .map(|&(k, r)| {
            let mut sim = Simulator::new(spec, cfg.chi0[k].clone(), policies, rollout_seed(cfg.seed, k, r))?;
            run_total(&mut sim, cfg.t_max, player)
        })
        .collect::<Result<_>>()?;
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

/// Player 1's mean discounted cost against the follower's extracted greedy
/// policy. Refuses an unconverged follower value unless `force` is set.
pub fn leader_objective(
    spec: &GameSpec,
    leader: &dyn Policy,
    follower: &TriggerPolicy,
    report: &FixedPointReport,
    cfg: &ObjectiveConfig,
    force: bool,
) -> Result<f64> {
    if !report.converged && !force {
        return Err(Error::NotConverged(format!(
            "follower value has residual {:.3e} > {:.1e}",
            report.final_residual, report.tol
        )));
    }
    mean_cost(spec, [leader, follower], Player::One, cfg)
}

/// Averaged interpolation weights of the objective's initial states.
fn objective_weights(grid: &GridSpec, cfg: &ObjectiveConfig) -> Result<Vec<f64>> {
    if cfg.chi0.is_empty() {
        return Err(Error::Precondition("objective needs initial states".into()));
    }
    let mut c = vec![0.0; grid.len()];
    let n = cfg.chi0.len() as f64;
    for chi in &cfg.chi0 {
        for (i, w) in grid.stencil(&grid.flatten(chi)) {
            c[i as usize] += w / n;
        }
    }
    Ok(c)
}

/// The smoothed objective: the leader's value on the grid under its policy
/// and the follower's weighted response, averaged over the initial states.
#[derive(Clone, Debug)]
pub struct SmoothedEval {
    pub value: f64,
    pub leader_value: ValueGrid,
    pub weights: ResponseWeights,
    pub report: FixedPointReport,
}

pub fn smoothed_objective(
    op: &StackelbergOperator,
    omega: &ValueGrid,
    mode: MinMode,
    cfg: &ObjectiveConfig,
    tol: f64,
    max_iters: usize,
) -> Result<SmoothedEval> {
    let c = objective_weights(op.grid(), cfg)?;
    let weights = op.response_weights(&omega.values, mode);
    let (leader_value, report) = op.leader_eval_solve(&weights, None, tol, max_iters);
    if !report.converged {
        return Err(Error::NotConverged(format!(
            "leader evaluation stalled at residual {:.3e}",
            report.final_residual
        )));
    }
    let value = c.iter().zip(&leader_value.values).map(|(a, b)| a * b).sum();
    Ok(SmoothedEval { value, leader_value, weights, report })
}

/// y = sum_{k=0}^{K} (A^T)^k b with K the smallest count whose tail bound
/// beta^{floor(K/2)} / (1 - beta) falls below `tail_tol`, beta being the
/// two-step modulus of A. Returns y and K.
pub fn neumann_solve(
    mut apply_t: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    beta: f64,
    tail_tol: f64,
) -> Result<(Vec<f64>, usize)> {
    if !(0.0..1.0).contains(&beta) || !(tail_tol > 0.0) {
        return Err(Error::Precondition(format!("Neumann series needs beta in [0,1), got {beta}")));
    }
    let mut k = 0usize;
    while beta.powi((k / 2) as i32) / (1.0 - beta) >= tail_tol {
        k += 1;
    }
    let mut y = b.to_vec();
    let mut term = b.to_vec();
    let mut next = vec![0.0; b.len()];
    for _ in 0..k {
        apply_t(&term, &mut next);
        std::mem::swap(&mut term, &mut next);
        if term.iter().all(|v| *v == 0.0) {
            break;
        }
        for (a, t) in y.iter_mut().zip(&term) {
            *a += t;
        }
    }
    Ok((y, k))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub enabled: bool,
    pub temperature: f64,
    /// Minimum gap between the best and second-best follower candidate for
    /// the hard argmin to count as unique.
    pub margin: f64,
    /// Central-difference step in the leader weights for the partials.
    pub xi_step: f64,
    pub tail_tol: f64,
    /// Tolerance and sweep cap for the smoothed fixed point.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            enabled: true,
            temperature: 0.05,
            margin: 1e-3,
            xi_step: 1e-4,
            tail_tol: 1e-6,
            inner_tol: 1e-9,
            inner_max_iters: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Hypergradient {
    pub grad: Vec<f64>,
    /// Partial in xi with the follower value held fixed.
    pub direct: Vec<f64>,
    /// Contribution through the follower's fixed point.
    pub indirect: Vec<f64>,
    pub mode: MinMode,
    pub neumann_terms: usize,
    pub ambiguous_nodes: usize,
    pub smoothed_objective: f64,
    /// Fixed point of the operator in `mode`.
    pub omega: ValueGrid,
    pub report: FixedPointReport,
}

/// Fixed point of the operator in `mode`, warm-started.
pub fn solve_mode(
    op: &StackelbergOperator,
    warm: &ValueGrid,
    mode: MinMode,
    tol: f64,
    max_iters: usize,
) -> Result<(ValueGrid, FixedPointReport)> {
    let (v, report) = op.solve(Some(warm), tol, max_iters, mode)?;
    if !report.converged {
        return Err(Error::NotConverged(format!(
            "fixed point stalled at residual {:.3e} after {} sweeps",
            report.final_residual, report.iterations
        )));
    }
    Ok((v, report))
}

/// Implicit-differentiation gradient of xi -> J(xi, omega*(xi)).
///
/// `op` must be built for `leader` and `omega_star` be its hard fixed point.
/// If some follower argmin is not unique by `margin`, the soft minimum at
/// the configured temperature is used throughout; with smoothing disabled
/// that case is an error naming the nodes.
pub fn hypergradient(
    spec: &GameSpec,
    op: &StackelbergOperator,
    leader: &LeaderPolicy,
    omega_star: &ValueGrid,
    smoothing: &SmoothingConfig,
    objective: &ObjectiveConfig,
) -> Result<Hypergradient> {
    let ambiguous = op.ambiguous_nodes(&omega_star.values, smoothing.margin);
    let mode = if ambiguous.is_empty() {
        MinMode::Hard
    } else if smoothing.enabled {
        MinMode::Soft { temperature: smoothing.temperature }
    } else {
        let shown: Vec<String> =
            ambiguous.iter().take(10).map(|(i, g)| format!("node {i} (gap {g:.2e})")).collect();
        return Err(Error::Precondition(format!(
            "{} follower decisions are not unique by margin {}: {}",
            ambiguous.len(),
            smoothing.margin,
            shown.join(", ")
        )));
    };
    hypergradient_in_mode(spec, op, leader, omega_star, mode, smoothing, objective, ambiguous.len())
}

#[allow(clippy::too_many_arguments)]
pub fn hypergradient_in_mode(
    spec: &GameSpec,
    op: &StackelbergOperator,
    leader: &LeaderPolicy,
    omega_star: &ValueGrid,
    mode: MinMode,
    smoothing: &SmoothingConfig,
    objective: &ObjectiveConfig,
    ambiguous_nodes: usize,
) -> Result<Hypergradient> {
    let (tol, max_iters) = (smoothing.inner_tol, smoothing.inner_max_iters);
    let (omega, report) = solve_mode(op, omega_star, mode, tol, max_iters)?;
    let eval = smoothed_objective(op, &omega, mode, objective, tol, max_iters)?;
    let c = objective_weights(op.grid(), objective)?;
    // adjoint of the leader's evaluation, then of the follower's fixed point
    let (z, _) = neumann_solve(
        |t, out| op.leader_eval_transpose(&eval.weights, t, out),
        &c,
        op.beta(),
        smoothing.tail_tol,
    )?;
    let b = op.leader_eval_omega_grad(&omega.values, mode, &eval.leader_value.values, &z);
    let (y, terms) = neumann_solve(
        |t, out| op.jacobian_transpose_apply(&omega.values, mode, t, out),
        &b,
        op.beta(),
        smoothing.tail_tol,
    )?;
    let h = smoothing.xi_step;
    let d = leader.xi.len();
    let mut direct = vec![0.0; d];
    let mut indirect = vec![0.0; d];
    let rows = |l: &LeaderPolicy| -> Result<(Vec<f64>, Vec<f64>)> {
        let dec = boundary_decisions(spec, op.grid(), op.follower().other(), l)?;
        let o = op.with_leader_decisions(spec, dec);
        let w = o.response_weights_leader(&eval.weights, &omega.values, mode);
        Ok((o.leader_eval_values(&w, &eval.leader_value.values), o.leader_values(&omega.values, mode)))
    };
    let nodes: Vec<usize> = op.leader_decisions().iter().map(|(i, _)| *i).collect();
    for i in 0..d {
        let (lp, sp) = rows(&leader.shifted(i, h))?;
        let (lm, sm) = rows(&leader.shifted(i, -h))?;
        for (k, node) in nodes.iter().enumerate() {
            direct[i] += z[*node] * (lp[k] - lm[k]) / (2.0 * h);
            indirect[i] += y[*node] * (sp[k] - sm[k]) / (2.0 * h);
        }
    }
    let grad = direct.iter().zip(&indirect).map(|(a, b)| a + b).collect();
    Ok(Hypergradient {
        grad,
        direct,
        indirect,
        mode,
        neumann_terms: terms,
        ambiguous_nodes,
        smoothed_objective: eval.value,
        omega,
        report,
    })
}

/// Central differences of xi -> J_s(xi, omega_s*(xi)), re-solving the
/// follower's fixed point in `mode` at each perturbed xi.
#[allow(clippy::too_many_arguments)]
pub fn fd_hypergradient(
    spec: &GameSpec,
    op: &StackelbergOperator,
    leader: &LeaderPolicy,
    warm: &ValueGrid,
    mode: MinMode,
    step: f64,
    smoothing: &SmoothingConfig,
    objective: &ObjectiveConfig,
) -> Result<Vec<f64>> {
    let (tol, max_iters) = (smoothing.inner_tol, smoothing.inner_max_iters);
    let eval = |l: &LeaderPolicy| -> Result<f64> {
        let o = op.with_leader(spec, l)?;
        let (w, _) = solve_mode(&o, warm, mode, tol, max_iters)?;
        Ok(smoothed_objective(&o, &w, mode, objective, tol, max_iters)?.value)
    };
    (0..leader.xi.len())
        .map(|i| Ok((eval(&leader.shifted(i, step))? - eval(&leader.shifted(i, -step))?) / (2.0 * step)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// alpha_k = alpha0 / (1 + decay k)
    InverseDecay { alpha0: f64, decay: f64 },
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        match self {
            StepSchedule::Constant { alpha } => *alpha,
            StepSchedule::InverseDecay { alpha0, decay } => alpha0 / (1.0 + decay * k as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradMethod {
    Implicit,
    FiniteDifference { step: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub schedule: StepSchedule,
    pub outer_iters: usize,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub grad: GradMethod,
    pub grad_tol: f64,
    pub smoothing: SmoothingConfig,
    /// Temperature multiplier per outer iteration, floored at `min_temperature`.
    pub temperature_decay: f64,
    pub min_temperature: f64,
    pub objective: ObjectiveConfig,
    pub operator: OperatorOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    /// Hard objective against the extracted follower policy.
    pub objective: f64,
    /// Objective of the smoothed problem that the gradient differentiates.
    pub smoothed_objective: f64,
    pub grad_norm: f64,
    pub inner_sweeps: usize,
    pub temperature: f64,
    pub xi: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeStatus {
    MaxIters,
    GradientTolerance,
    InnerNotConverged,
}

pub struct OptimizeResult {
    pub params: LeaderParams,
    pub history: Vec<HistoryRow>,
    pub status: OptimizeStatus,
    pub value: ValueGrid,
    pub follower_policy: TriggerPolicy,
    pub report: FixedPointReport,
    /// Seconds per history row; kept apart so the history is reproducible.
    pub wall_seconds: Vec<f64>,
}

/// The final row carries no gradient; its smoothed columns are left empty.
pub fn write_history_csv<W: Write>(history: &[HistoryRow], out: W) -> Result<()> {
    let cell = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    let mut w = csv::Writer::from_writer(out);
    let d = history.first().map_or(0, |r| r.xi.len());
    let mut header: Vec<String> =
        ["iter", "objective", "smoothed_objective", "grad_norm", "inner_sweeps", "temperature"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend((0..d).map(|i| format!("xi_{i}")));
    w.write_record(&header)?;
    for r in history {
        let mut rec = vec![
            r.iter.to_string(),
            r.objective.to_string(),
            cell(r.smoothed_objective),
            cell(r.grad_norm),
            r.inner_sweeps.to_string(),
            r.temperature.to_string(),
        ];
        rec.extend(r.xi.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Bilevel descent: solve the follower's fixed point (warm-started), then
/// step the leader's weights along the hypergradient.
pub fn optimize_leader(
    spec: &GameSpec,
    grid: Arc<GridSpec>,
    head: Arc<PolicyHead>,
    xi0: LeaderParams,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    if (0..opts.outer_iters).any(|k| !(opts.schedule.alpha(k) > 0.0)) {
        return Err(Error::Precondition("step sizes must be positive".into()));
    }
    let mut leader = LeaderPolicy::new(head, xi0.xi)?;
    let mut op = StackelbergOperator::new(spec, grid.clone(), &leader, &opts.operator)?;
    let mut warm: Option<ValueGrid> = None;
    let mut history = Vec::new();
    let mut wall = Vec::new();
    let mut temperature = opts.smoothing.temperature;
    let mut k = 0;
    loop {
        let started = Instant::now();
        let (value, report) = op.solve(warm.as_ref(), opts.inner_tol, opts.inner_max_iters, MinMode::Hard)?;
        let policy = op.greedy_policy(&value.values, MinMode::Hard);
        if !report.converged {
            log::warn!("inner loop did not converge at outer iteration {k}; stopping");
            return Ok(OptimizeResult {
                params: LeaderParams { xi: leader.xi },
                history,
                status: OptimizeStatus::InnerNotConverged,
                value,
                follower_policy: policy,
                report,
                wall_seconds: wall,
            });
        }
        let j = leader_objective(spec, &leader, &policy, &report, &opts.objective, false)?;
        let mut row = HistoryRow {
            iter: k,
            objective: j,
            smoothed_objective: f64::NAN,
            grad_norm: f64::NAN,
            inner_sweeps: report.iterations,
            temperature,
            xi: leader.xi.clone(),
        };
        if k == opts.outer_iters {
            history.push(row);
            wall.push(started.elapsed().as_secs_f64());
            return Ok(OptimizeResult {
                params: LeaderParams { xi: leader.xi },
                history,
                status: OptimizeStatus::MaxIters,
                value,
                follower_policy: policy,
                report,
                wall_seconds: wall,
            });
        }
        let smoothing = SmoothingConfig { temperature, ..opts.smoothing.clone() };
        let hg = hypergradient(spec, &op, &leader, &value, &smoothing, &opts.objective)?;
        let grad = match opts.grad {
            GradMethod::Implicit => hg.grad.clone(),
            GradMethod::FiniteDifference { step } => {
                fd_hypergradient(spec, &op, &leader, &hg.omega, hg.mode, step, &smoothing, &opts.objective)?
            }
        };
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        row.smoothed_objective = hg.smoothed_objective;
        row.grad_norm = norm;
        history.push(row);
        wall.push(started.elapsed().as_secs_f64());
        if norm < opts.grad_tol {
            return Ok(OptimizeResult {
                params: LeaderParams { xi: leader.xi },
                history,
                status: OptimizeStatus::GradientTolerance,
                value,
                follower_policy: policy,
                report,
                wall_seconds: wall,
            });
        }
        let alpha = opts.schedule.alpha(k);
        let xi: Vec<f64> = leader.xi.iter().zip(&grad).map(|(x, g)| x - alpha * g).collect();
        leader = LeaderPolicy::new(leader.head.clone(), xi)?;
        op = op.with_leader(spec, &leader)?;
        warm = Some(value);
        temperature = (temperature * opts.temperature_decay).max(opts.min_temperature);
        k += 1;
    }
}
