//! Simultaneous-move relaxation: the coupled operator on both players'
//! values, pure-strategy static games at corners, and damped iteration
//! with an honest account of non-convergence.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::follower::{
    candidates, slice_index, slice_len, trigger_const, AffineBlock, FlowTable, OperatorOptions,
    StackelbergOperator, TriggerPolicy,
};
use crate::grid::{GridSpec, ValueGrid};
use crate::model::{GameSpec, Player};
use crate::sim::Decision;

/// How a corner static game was resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    /// A pure equilibrium, `count` of them in total.
    PureNash { count: usize },
    /// No pure equilibrium: best response cycled through these pairs.
    BestResponseCycle { cycle: Vec<(usize, usize)> },
    /// No pure equilibrium and no cycle within the round cap.
    BestResponseCapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticGameSolution {
    pub row: usize,
    pub col: usize,
    pub values: (f64, f64),
    pub resolution: Resolution,
}

const BEST_RESPONSE_ROUNDS: usize = 100;

fn argmin_by(n: usize, f: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    for k in 1..n {
        if f(k) < f(best) {
            best = k;
        }
    }
    best
}

/// All pure equilibria of the bimatrix game where the row player minimizes
/// `a` and the column player minimizes `b`, in row-major order.
pub fn pure_equilibria(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), a.first().map_or(0, Vec::len));
    let col_min: Vec<f64> = (0..m).map(|j| (0..n).map(|i| a[i][j]).fold(f64::INFINITY, f64::min)).collect();
    let row_min: Vec<f64> = b.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if a[i][j] <= col_min[j] && b[i][j] <= row_min[i] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Static game on the value surface: the lexicographically first pure
/// equilibrium, or a best-response fallback when there is none.
pub fn static_game_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<StaticGameSolution> {
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || b.len() != n || a.iter().chain(b).any(|r| r.len() != m) {
        return Err(structural("bimatrix must be non-empty and rectangular"));
    }
    let eq = pure_equilibria(a, b);
    if let Some(&(i, j)) = eq.first() {
        return Ok(StaticGameSolution {
            row: i,
            col: j,
            values: (a[i][j], b[i][j]),
            resolution: Resolution::PureNash { count: eq.len() },
        });
    }
    let (mut i, mut j) = (0, 0);
    let mut seen: Vec<(usize, usize)> = vec![(i, j)];
    for _ in 0..BEST_RESPONSE_ROUNDS {
        i = argmin_by(n, |r| a[r][j]);
        j = argmin_by(m, |c| b[i][c]);
        if let Some(pos) = seen.iter().position(|p| *p == (i, j)) {
            return Ok(StaticGameSolution {
                row: i,
                col: j,
                values: (a[i][j], b[i][j]),
                resolution: Resolution::BestResponseCycle { cycle: seen[pos..].to_vec() },
            });
        }
        seen.push((i, j));
    }
    Ok(StaticGameSolution { row: i, col: j, values: (a[i][j], b[i][j]), resolution: Resolution::BestResponseCapped })
}

/// Interpolation stencil of one candidate over its owner's clock and
/// parameter axes, as offsets from the node with those coordinates at zero.
fn candidate_stencil(grid: &GridSpec, p: Player, dwell: f64, param: &[f64]) -> Vec<(usize, f64)> {
    let mut out = vec![(0usize, 1.0)];
    let axes = std::iter::once(grid.sigma_axis(p)).chain(grid.theta_axes(p));
    let values = std::iter::once(dwell).chain(param.iter().copied());
    for (ax, v) in axes.zip(values) {
        let (i0, frac, _) = grid.axes()[ax].locate(v);
        let s = grid.strides()[ax];
        let len = out.len();
        for k in 0..len {
            let (o, w) = out[k];
            out[k] = (o + i0 * s, w * (1.0 - frac));
            if frac > 0.0 {
                out.push((o + (i0 + 1) * s, w * frac));
            }
        }
    }
    out
}

/// The coupled operator on (v1, v2).
pub struct NashOperator {
    grid: Arc<GridSpec>,
    beta: f64,
    flow: Arc<AffineBlock>,
    flow_cost: [Vec<f64>; 2],
    /// Intervention rows of player i where only player i acts.
    solo: [AffineBlock; 2],
    corners: Vec<usize>,
    cands: [Vec<(f64, Vec<f64>)>; 2],
    cand_stencils: [Vec<Vec<(usize, f64)>>; 2],
    cand_cost: [Vec<f64>; 2],
}

/// Output of one application of the coupled operator.
pub struct NashSweep {
    pub values: [ValueGrid; 2],
    /// Each player's choices on its own boundary slice.
    pub policies: [TriggerPolicy; 2],
    /// Corners resolved without a pure equilibrium.
    pub corner_fallbacks: usize,
}

impl NashOperator {
    pub fn new(spec: &GameSpec, grid: Arc<GridSpec>, opts: &OperatorOptions) -> Result<Self> {
        spec.check_structure()?;
        spec.require_time_invariant()?;
        if !(spec.discount > 0.0) || !(spec.min_dwell() > 0.0) {
            return Err(Error::Precondition(
                "the operator needs a positive discount and positive dwell lower bounds".into(),
            ));
        }
        let flows = FlowTable::build(spec, &grid, opts)?;
        let solo = Player::BOTH.map(|p| StackelbergOperator::follower_block(spec, &grid, p));
        let corners =
            (0..grid.len()).filter(|&i| grid.on_boundary(i, Player::One) && grid.on_boundary(i, Player::Two)).collect();
        let cands = Player::BOTH
            .map(|p| candidates(&grid, p).into_iter().map(|(t, th)| (t, th.to_vec())).collect::<Vec<_>>());
        let cand_stencils = Player::BOTH
            .map(|p| cands[p.index()].iter().map(|(t, th)| candidate_stencil(&grid, p, *t, th)).collect());
        let cand_cost = Player::BOTH.map(|p| cands[p.index()].iter().map(|(t, _)| trigger_const(spec, p, *t)).collect());
        Ok(NashOperator {
            beta: spec.contraction_modulus(),
            flow: Arc::new(flows.block),
            flow_cost: flows.cost,
            solo,
            corners,
            cands,
            cand_stencils,
            cand_cost,
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Index of `node` with both players' clock and parameter coordinates
    /// set to zero.
    fn base_index(&self, node: usize) -> usize {
        let g = &self.grid;
        let mut base = node;
        for p in Player::BOTH {
            for ax in std::iter::once(g.sigma_axis(p)).chain(g.theta_axes(p)) {
                base -= g.coord(node, ax) * g.strides()[ax];
            }
        }
        base
    }

    /// Bimatrix of post-reset values at a corner: entry (a, b) holds
    /// g_i + v_i(x, T_a, theta_a, T_b, theta_b) for each player.
    pub fn corner_bimatrix(&self, node: usize, v: [&[f64]; 2]) -> [Vec<Vec<f64>>; 2] {
        let base = self.base_index(node);
        let (n, m) = (self.cands[0].len(), self.cands[1].len());
        let mut out = [vec![vec![0.0; m]; n], vec![vec![0.0; m]; n]];
        for a in 0..n {
            for b in 0..m {
                let mut val = [0.0; 2];
                for (o1, w1) in &self.cand_stencils[0][a] {
                    for (o2, w2) in &self.cand_stencils[1][b] {
                        let j = base + o1 + o2;
                        val[0] += w1 * w2 * v[0][j];
                        val[1] += w1 * w2 * v[1][j];
                    }
                }
                out[0][a][b] = self.cand_cost[0][a] + val[0];
                out[1][a][b] = self.cand_cost[1][b] + val[1];
            }
        }
        out
    }

    pub fn sweep(&self, v1: &ValueGrid, v2: &ValueGrid) -> Result<NashSweep> {
        if *v1.grid != *self.grid || *v2.grid != *self.grid {
            return Err(structural("value tables and operator are on different grids"));
        }
        let g = &self.grid;
        let v = [v1.values.as_slice(), v2.values.as_slice()];
        let mut out = [vec![0.0; g.len()], vec![0.0; g.len()]];
        let mut choices: [Vec<Decision>; 2] =
            Player::BOTH.map(|p| vec![Decision::new(0.0, Vec::new()); slice_len(g, p)]);

        let f = &*self.flow;
        for s in 0..f.len() {
            let node = f.nodes[s] as usize;
            let r = f.rows(s).start;
            for i in 0..2 {
                out[i][node] = f.row_value(r, v[i]) + self.flow_cost[i][s];
            }
        }

        for p in Player::BOTH {
            let (i, o) = (p.index(), p.other().index());
            let b = &self.solo[i];
            let picks: Vec<(f64, f64, u32)> = (0..b.len())
                .into_par_iter()
                .map(|s| {
                    let mut best = b.rows(s).start;
                    let mut best_val = b.row_value(best, v[i]);
                    for r in b.rows(s).skip(1) {
                        let q = b.row_value(r, v[i]);
                        if q < best_val {
                            best = r;
                            best_val = q;
                        }
                    }
                    let other = b.row_value(best, v[o]) - b.consts[best];
                    (best_val, other, b.choice[best])
                })
                .collect();
            for (s, (mine, other, k)) in picks.into_iter().enumerate() {
                let node = b.nodes[s] as usize;
                out[i][node] = mine;
                out[o][node] = other;
                let (t, th) = &self.cands[i][k as usize];
                choices[i][slice_index(g, p, node)] = Decision::new(*t, th.clone());
            }
        }

        let solved: Vec<StaticGameSolution> = self
            .corners
            .par_iter()
            .map(|&node| {
                let [a, b] = self.corner_bimatrix(node, v);
                static_game_solve(&a, &b)
            })
            .collect::<Result<_>>()?;
        let mut fallbacks = 0;
        for (&node, sol) in self.corners.iter().zip(solved) {
            out[0][node] = sol.values.0;
            out[1][node] = sol.values.1;
            if !matches!(sol.resolution, Resolution::PureNash { .. }) {
                fallbacks += 1;
            }
            for (p, k) in [(Player::One, sol.row), (Player::Two, sol.col)] {
                let (t, th) = &self.cands[p.index()][k];
                choices[p.index()][slice_index(g, p, node)] = Decision::new(*t, th.clone());
            }
        }
        let [o1, o2] = out;
        let [c1, c2] = choices;
        Ok(NashSweep {
            values: [
                ValueGrid { grid: g.clone(), values: o1 },
                ValueGrid { grid: g.clone(), values: o2 },
            ],
            policies: [
                TriggerPolicy { owner: Player::One, grid: g.clone(), decisions: c1 },
                TriggerPolicy { owner: Player::Two, grid: g.clone(), decisions: c2 },
            ],
            corner_fallbacks: fallbacks,
        })
    }
}

/// One application of the coupled operator.
pub fn nash_sweep(spec: &GameSpec, v1: &ValueGrid, v2: &ValueGrid) -> Result<(ValueGrid, ValueGrid)> {
    let op = NashOperator::new(spec, v1.grid.clone(), &OperatorOptions::default())?;
    let [w1, w2] = op.sweep(v1, v2)?.values;
    Ok((w1, w2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Converged,
    /// Bounded but not settling within the iteration cap.
    Oscillating,
    Diverging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub iterations: usize,
    /// Joint sup-norm change per damped step.
    pub residuals: Vec<f64>,
    pub final_residual: f64,
    pub damping: f64,
    pub tol: f64,
    pub classification: Classification,
    pub corner_fallbacks: usize,
}

pub fn classify_residuals(residuals: &[f64], converged: bool) -> Classification {
    if converged {
        return Classification::Converged;
    }
    let last = residuals.last().copied().unwrap_or(0.0);
    let best = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let first = residuals.first().copied().unwrap_or(0.0);
    if !last.is_finite() || last > 1e3 * best.max(f64::MIN_POSITIVE) || last > 1e3 * first.max(f64::MIN_POSITIVE) {
        Classification::Diverging
    } else {
        Classification::Oscillating
    }
}

pub struct NashResult {
    pub values: [ValueGrid; 2],
    pub policies: [TriggerPolicy; 2],
    pub report: NashReport,
}

/// Damped iteration (v1, v2) <- (1 - alpha)(v1, v2) + alpha N(v1, v2) from
/// zero. Non-convergence is reported, not raised.
pub fn nash_iterate(
    spec: &GameSpec,
    grid: Arc<GridSpec>,
    damping: f64,
    tol: f64,
    max_iters: usize,
) -> Result<NashResult> {
    let op = NashOperator::new(spec, grid, &OperatorOptions::default())?;
    nash_iterate_with(&op, damping, tol, max_iters)
}

pub fn nash_iterate_with(op: &NashOperator, damping: f64, tol: f64, max_iters: usize) -> Result<NashResult> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Precondition(format!("damping must lie in (0, 1], got {damping}")));
    }
    if !(tol > 0.0) || max_iters == 0 {
        return Err(Error::Precondition("tolerance and iteration cap must be positive".into()));
    }
    let g = op.grid().clone();
    let mut v = [ValueGrid::constant(g.clone(), 0.0), ValueGrid::constant(g.clone(), 0.0)];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut last = None;
    for _ in 0..max_iters {
        let sw = op.sweep(&v[0], &v[1])?;
        let mut r = 0.0f64;
        for i in 0..2 {
            for (a, b) in v[i].values.iter_mut().zip(&sw.values[i].values) {
                let next = (1.0 - damping) * *a + damping * b;
                r = r.max((next - *a).abs());
                *a = next;
            }
        }
        residuals.push(r);
        last = Some(sw);
        if r < tol {
            converged = true;
            break;
        }
        if !r.is_finite() {
            break;
        }
    }
    let sw = last.expect("at least one sweep");
    let classification = classify_residuals(&residuals, converged);
    if classification != Classification::Converged {
        log::warn!("Nash relaxation {classification:?} after {} steps", residuals.len());
    }
    let report = NashReport {
        iterations: residuals.len(),
        final_residual: *residuals.last().unwrap_or(&0.0),
        residuals,
        damping,
        tol,
        classification,
        corner_fallbacks: sw.corner_fallbacks,
    };
    Ok(NashResult { values: v, policies: sw.policies, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::follower::MinMode;
    use crate::grid::GridConfig;
    use crate::model::*;
    use crate::rng;
    use rand::Rng;

    fn coupled() -> GameSpec {
        let mut spec = fixtures::scalar_zero();
        spec.drift = Drift::Linear { a: vec![vec![0.0]], b1: vec![vec![1.0]], b2: vec![vec![-1.0]] };
        for (i, p) in spec.players.iter_mut().enumerate() {
            p.dwell_bounds = DwellBounds::new(0.1, 0.3);
            let s = if i == 0 { 1.0 } else { -1.0 };
            let (r1, r2) = if i == 0 { (0.2, 0.0) } else { (0.0, 0.3) };
            p.running_cost = RunningCost::Quadratic {
                q: vec![vec![s]],
                r1: vec![vec![r1]],
                r2: vec![vec![r2]],
                offset: 0.0,
            };
            p.running_cost_bound = 2.0;
            p.trigger_cost = TriggerCost::Constant { value: 0.02 };
        }
        spec
    }

    fn grid(spec: &GameSpec) -> Arc<GridSpec> {
        Arc::new(GridSpec::new(spec, &GridConfig::uniform(spec, &[7], 0.1, 2)).unwrap())
    }

    fn random(grid: &Arc<GridSpec>, seed: u64) -> ValueGrid {
        let mut r = rng::seeded(seed);
        ValueGrid::from_values(grid.clone(), (0..grid.len()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_matrices_pick_smallest_indices() {
        let a = vec![vec![1.0; 3]; 3];
        let s = static_game_solve(&a, &a).unwrap();
        assert_eq!((s.row, s.col), (0, 0));
        assert_eq!(s.resolution, Resolution::PureNash { count: 9 });
    }

    #[test]
    fn dominant_strategies_are_found() {
        let a = vec![vec![3.0, 2.0, 4.0], vec![0.0, -1.0, 1.0], vec![5.0, 5.0, 5.0]];
        let b = vec![vec![2.0, 0.0, 1.0], vec![3.0, 1.0, 2.0], vec![9.0, 7.0, 8.0]];
        let s = static_game_solve(&a, &b).unwrap();
        assert_eq!((s.row, s.col), (1, 1));
    }

    #[test]
    fn matching_pennies_falls_back_to_a_cycle() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let b = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = static_game_solve(&a, &b).unwrap();
        match s.resolution {
            Resolution::BestResponseCycle { cycle } => assert_eq!(cycle, vec![(0, 1), (1, 0)]),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn zero_game_stays_at_zero() {
        let mut spec = coupled();
        for p in spec.players.iter_mut() {
            p.running_cost = RunningCost::Zero;
            p.trigger_cost = TriggerCost::Constant { value: 0.0 };
        }
        let res = nash_iterate(&spec, grid(&spec), 0.5, 1e-9, 100).unwrap();
        assert_eq!(res.report.iterations, 1);
        assert_eq!(res.report.classification, Classification::Converged);
        assert!(res.values.iter().all(|v| v.sup_norm() == 0.0));
    }

    #[test]
    fn each_component_is_the_stackelberg_sweep_against_the_other_choices() {
        let spec = coupled();
        let g = grid(&spec);
        let op = NashOperator::new(&spec, g.clone(), &OperatorOptions::default()).unwrap();
        let (v1, v2) = (random(&g, 1), random(&g, 2));
        let sw = op.sweep(&v1, &v2).unwrap();
        for (f, v) in [(Player::Two, &v2), (Player::One, &v1)] {
            let other = &sw.policies[f.other().index()];
            let s = StackelbergOperator::with_follower(&spec, g.clone(), f, other, &OperatorOptions::default())
                .unwrap();
            let w = s.apply(v, MinMode::Hard).unwrap();
            let mut pure_corners = 0;
            for (n, (a, b)) in w.values.iter().zip(&sw.values[f.index()].values).enumerate() {
                if g.on_boundary(n, Player::One) && g.on_boundary(n, Player::Two) {
                    // the fallback only guarantees the column player's response
                    let [ma, mb] = op.corner_bimatrix(n, [&v1.values, &v2.values]);
                    if pure_equilibria(&ma, &mb).is_empty() {
                        continue;
                    }
                    pure_corners += 1;
                }
                assert!((a - b).abs() < 1e-12, "{f:?} node {n}: {a} vs {b}");
            }
            assert!(pure_corners > 0);
        }
    }

    #[test]
    fn swap_symmetric_game_gives_swapped_outputs() {
        // x = (a, b), each player drives and pays for its own coordinate
        let p = |own: usize| PlayerSpec {
            dwell_bounds: DwellBounds::new(0.1, 0.3),
            param_box: BoxBounds::symmetric(1, 1.0),
            control_law: ControlLaw::Constant,
            running_cost: RunningCost::Quadratic {
                q: (0..2).map(|i| (0..2).map(|j| if i == own && j == own { 1.0 } else { 0.0 }).collect()).collect(),
                r1: vec![vec![if own == 0 { 0.1 } else { 0.0 }]],
                r2: vec![vec![if own == 1 { 0.1 } else { 0.0 }]],
                offset: 0.0,
            },
            running_cost_bound: 3.0,
            trigger_cost: TriggerCost::Constant { value: 0.05 },
        };
        let spec = GameSpec {
            state_box: BoxBounds::symmetric(2, 1.0),
            drift: Drift::Linear {
                a: vec![vec![-0.5, 0.0], vec![0.0, -0.5]],
                b1: vec![vec![1.0], vec![0.0]],
                b2: vec![vec![0.0], vec![1.0]],
            },
            jump_intensity: JumpIntensity::Zero,
            jump_rate_bound: 0.0,
            jump_kernel: JumpKernel::Identity,
            discount: 0.5,
            players: [p(0), p(1)],
            trigger_cost_timing: TriggerCostTiming::AtDecision,
        };
        let g = Arc::new(GridSpec::new(&spec, &GridConfig::uniform(&spec, &[3, 3], 0.1, 2)).unwrap());
        let op = NashOperator::new(&spec, g.clone(), &OperatorOptions::default()).unwrap();
        let swap = |chi: &AugmentedState| {
            AugmentedState::new(
                vec![chi.x[1], chi.x[0]],
                chi.sigma[1],
                chi.theta[1].clone(),
                chi.sigma[0],
                chi.theta[0].clone(),
            )
        };
        let v1 = random(&g, 7);
        let v2 = ValueGrid::from_fn(g.clone(), |c| v1.interpolate(&swap(c)));
        let sw = op.sweep(&v1, &v2).unwrap();
        let mut unique = 0;
        for i in 0..g.len() {
            if g.on_boundary(i, Player::One) && g.on_boundary(i, Player::Two) {
                // row-major selection among several equilibria is not swap invariant
                let [ma, mb] = op.corner_bimatrix(i, [&v1.values, &v2.values]);
                if pure_equilibria(&ma, &mb).len() != 1 {
                    continue;
                }
                unique += 1;
            }
            let chi = g.state(i);
            let j = g.nearest(&g.flatten(&swap(&chi)));
            assert!((sw.values[0].values[i] - sw.values[1].values[j]).abs() < 1e-9, "node {i}");
        }
        assert!(unique > 0);
    }

    #[test]
    fn outputs_stay_in_the_cost_ball() {
        let spec = coupled();
        let g = grid(&spec);
        let op = NashOperator::new(&spec, g.clone(), &OperatorOptions::default()).unwrap();
        let gmax = 0.02 / (1.0 - spec.contraction_modulus());
        let bound = 2.0 / spec.discount + gmax;
        let mut v = [ValueGrid::constant(g.clone(), 0.0), ValueGrid::constant(g.clone(), 0.0)];
        for _ in 0..60 {
            let sw = op.sweep(&v[0], &v[1]).unwrap();
            for w in &sw.values {
                assert!(w.sup_norm() <= bound + 1e-9);
            }
            v = sw.values;
        }
    }

    #[test]
    fn damping_changes_the_path_not_the_contract() {
        let spec = coupled();
        let g = grid(&spec);
        let op = NashOperator::new(&spec, g, &OperatorOptions::default()).unwrap();
        for alpha in [0.5, 1.0] {
            let r = nash_iterate_with(&op, alpha, 1e-8, 3000).unwrap();
            assert_eq!(r.report.residuals.len(), r.report.iterations);
            assert!(r.report.residuals.iter().all(|x| *x >= 0.0));
        }
        assert!(nash_iterate_with(&op, 0.0, 1e-8, 10).is_err());
    }

    #[test]
    fn opposed_costs_are_reported_as_oscillating() {
        let spec = coupled();
        let res = nash_iterate(&spec, grid(&spec), 0.5, 1e-10, 2000).unwrap();
        assert_eq!(res.report.classification, Classification::Oscillating);
        assert!(res.report.corner_fallbacks > 0);
        assert!(res.values.iter().all(|v| v.values.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn random_bimatrix_picks_admit_no_profitable_deviation() {
        let mut r = rng::seeded(11);
        for _ in 0..100 {
            let (n, m) = (r.random_range(1..6), r.random_range(1..6));
            let mut draw = || (0..n).map(|_| (0..m).map(|_| r.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
            let (a, b) = (draw(), draw());
            let s = static_game_solve(&a, &b).unwrap();
            if let Resolution::PureNash { .. } = s.resolution {
                assert!((0..n).all(|i| a[i][s.col] >= a[s.row][s.col]));
                assert!((0..m).all(|j| b[s.row][j] >= b[s.row][s.col]));
                assert_eq!(pure_equilibria(&a, &b)[0], (s.row, s.col));
            } else {
                assert!(pure_equilibria(&a, &b).is_empty());
            }
        }
    }

    #[test]
    fn converged_relaxation_is_a_best_response_for_the_second_player() {
        // both players want x small
        let mut spec = coupled();
        if let RunningCost::Quadratic { q, .. } = &mut spec.players[1].running_cost {
            q[0][0] = 1.0;
        }
        let g = grid(&spec);
        let res = nash_iterate(&spec, g.clone(), 0.5, 1e-10, 20000).unwrap();
        assert_eq!(res.report.classification, Classification::Converged);
        assert_eq!(res.report.corner_fallbacks, 0);
        let sol = crate::follower::value_iteration(&spec, &res.policies[0], g, 1e-10, 20000).unwrap();
        assert!(sol.report.converged);
        let d = crate::grid::sup_norm_diff(&sol.value, &res.values[1]).unwrap();
        assert!(d < 1e-6, "{d}");
    }
}
