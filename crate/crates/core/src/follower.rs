//! Follower best response: the Bellman operator of the follower against a
//! committed leader policy, its fixed point, and greedy policy extraction.
//!
//! The operator is materialized once per leader policy as a table of affine
//! rows `c + sum_j w_j v_j`. Flow nodes have one row (discounted running cost
//! to the next boundary plus the discounted interpolated endpoint value).
//! Follower-boundary nodes have one row per (dwell, parameter) candidate and
//! take the minimum. Leader-boundary nodes read the value at the leader's
//! reset. At corners the leader's decision is evaluated at the pre-decision
//! state and the follower minimizes over its candidates given that reset.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::grid::{GridSpec, Point, Stencil, ValueGrid};
use crate::model::{time_to_boundary, Action, AugmentedState, GameSpec, Player};
use crate::rng::{self, SimRng};
use crate::sim::{self, Decision, Policy, RolloutOptions, TIE_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MinMode {
    Hard,
    /// Log-sum-exp soft minimum at the given temperature.
    Soft { temperature: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Flow,
    FollowerBoundary,
    LeaderBoundary,
    Corner,
}

pub fn classify(grid: &GridSpec, idx: usize, follower: Player) -> NodeClass {
    let f = grid.on_boundary(idx, follower);
    let l = grid.on_boundary(idx, follower.other());
    match (l, f) {
        (false, false) => NodeClass::Flow,
        (false, true) => NodeClass::FollowerBoundary,
        (true, false) => NodeClass::LeaderBoundary,
        (true, true) => NodeClass::Corner,
    }
}

/// Minimum over a slot's rows. Returns the value and the index of the
/// selected row (first minimizer under strict `<`).
fn min_rows(q: &[f64], mode: MinMode) -> (f64, usize) {
    let mut best = 0;
    for (k, v) in q.iter().enumerate().skip(1) {
        if *v < q[best] {
            best = k;
        }
    }
    match mode {
        MinMode::Hard => (q[best], best),
        MinMode::Soft { temperature } => {
            if q.len() == 1 {
                return (q[0], 0);
            }
            let m = q[best];
            let s: f64 = q.iter().map(|v| (-(v - m) / temperature).exp()).sum();
            (m - temperature * s.ln(), best)
        }
    }
}

/// Weights of the derivative of the minimum with respect to each row.
fn min_weights(q: &[f64], mode: MinMode, out: &mut Vec<f64>) {
    out.clear();
    out.resize(q.len(), 0.0);
    let (_, best) = min_rows(q, MinMode::Hard);
    match mode {
        MinMode::Hard => out[best] = 1.0,
        MinMode::Soft { temperature } => {
            let m = q[best];
            let mut s = 0.0;
            for (o, v) in out.iter_mut().zip(q) {
                *o = (-(v - m) / temperature).exp();
                s += *o;
            }
            for o in out.iter_mut() {
                *o /= s;
            }
        }
    }
}

/// Slots of affine rows in compressed storage.
#[derive(Clone, Debug)]
pub(crate) struct AffineBlock {
    pub nodes: Vec<u32>,
    pub row_ptr: Vec<usize>,
    pub consts: Vec<f64>,
    pub ent_ptr: Vec<usize>,
    pub idx: Vec<u32>,
    pub w: Vec<f64>,
    /// Candidate index of each row, `u32::MAX` for rows without a decision.
    pub choice: Vec<u32>,
}

impl AffineBlock {
    fn new() -> Self {
        AffineBlock {
            nodes: Vec::new(),
            row_ptr: vec![0],
            consts: Vec::new(),
            ent_ptr: vec![0],
            idx: Vec::new(),
            w: Vec::new(),
            choice: Vec::new(),
        }
    }

    fn push_row(&mut self, c: f64, entries: &[(u32, f64)], choice: u32) {
        self.consts.push(c);
        for (i, w) in entries {
            self.idx.push(*i);
            self.w.push(*w);
        }
        self.ent_ptr.push(self.idx.len());
        self.choice.push(choice);
    }

    fn end_slot(&mut self, node: usize) {
        self.nodes.push(node as u32);
        self.row_ptr.push(self.consts.len());
    }

    fn append(&mut self, other: AffineBlock) {
        let rows = self.consts.len();
        let ents = self.idx.len();
        self.nodes.extend(other.nodes);
        self.row_ptr.extend(other.row_ptr[1..].iter().map(|r| r + rows));
        self.consts.extend(other.consts);
        self.ent_ptr.extend(other.ent_ptr[1..].iter().map(|e| e + ents));
        self.idx.extend(other.idx);
        self.w.extend(other.w);
        self.choice.extend(other.choice);
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn rows(&self, s: usize) -> std::ops::Range<usize> {
        self.row_ptr[s]..self.row_ptr[s + 1]
    }

    pub(crate) fn row_value(&self, r: usize, v: &[f64]) -> f64 {
        let mut acc = self.consts[r];
        for e in self.ent_ptr[r]..self.ent_ptr[r + 1] {
            acc += self.w[e] * v[self.idx[e] as usize];
        }
        acc
    }

    fn row_values(&self, s: usize, v: &[f64], q: &mut Vec<f64>) {
        q.clear();
        q.extend(self.rows(s).map(|r| self.row_value(r, v)));
    }

    /// Per-slot (value, selected row) under `mode`.
    fn eval(&self, v: &[f64], mode: MinMode) -> Vec<(f64, usize)> {
        (0..self.len())
            .into_par_iter()
            .map_init(Vec::new, |q, s| {
                self.row_values(s, v, q);
                let (val, k) = min_rows(q, mode);
                (val, self.row_ptr[s] + k)
            })
            .collect()
    }

    fn eval_into(&self, v: &[f64], mode: MinMode, out: &mut [f64]) {
        for (s, (val, _)) in self.eval(v, mode).into_iter().enumerate() {
            out[self.nodes[s] as usize] = val;
        }
    }

    /// out += (d block / d v)^T y, linearized at v.
    fn transpose_acc(&self, v: &[f64], mode: MinMode, y: &[f64], out: &mut [f64]) {
        let mut q = Vec::new();
        let mut p = Vec::new();
        for s in 0..self.len() {
            let ys = y[self.nodes[s] as usize];
            if ys == 0.0 {
                continue;
            }
            let rows = self.rows(s);
            if rows.len() == 1 {
                let r = rows.start;
                for e in self.ent_ptr[r]..self.ent_ptr[r + 1] {
                    out[self.idx[e] as usize] += ys * self.w[e];
                }
                continue;
            }
            self.row_values(s, v, &mut q);
            min_weights(&q, mode, &mut p);
            for (k, r) in rows.enumerate() {
                let c = ys * p[k];
                if c == 0.0 {
                    continue;
                }
                for e in self.ent_ptr[r]..self.ent_ptr[r + 1] {
                    out[self.idx[e] as usize] += c * self.w[e];
                }
            }
        }
    }

    /// Dense Jacobian rows, for small instances.
    fn jacobian_into(&self, v: &[f64], mode: MinMode, dense: &mut [Vec<f64>]) {
        let mut q = Vec::new();
        let mut p = Vec::new();
        for s in 0..self.len() {
            let row = &mut dense[self.nodes[s] as usize];
            self.row_values(s, v, &mut q);
            min_weights(&q, mode, &mut p);
            for (k, r) in self.rows(s).enumerate() {
                for e in self.ent_ptr[r]..self.ent_ptr[r + 1] {
                    row[self.idx[e] as usize] += p[k] * self.w[e];
                }
            }
        }
    }

    fn entries(&self) -> usize {
        self.idx.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorOptions {
    /// Monte Carlo samples per flow node when the process has jumps.
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        OperatorOptions { n_mc: 128, seed: 0 }
    }
}

/// Flow rows with per-player running-cost constants.
#[derive(Debug)]
pub(crate) struct FlowTable {
    pub block: AffineBlock,
    pub cost: [Vec<f64>; 2],
    pub std_err: [Vec<f64>; 2],
}

/// Visits each sample path of the flow from `chi` over `tau`: discounted
/// running costs and the endpoint state. Jumps re-enter the flow until tau.
pub(crate) fn flow_paths(
    spec: &GameSpec,
    chi: &AugmentedState,
    tau: f64,
    n_mc: usize,
    seed: u64,
    mut visit: impl FnMut([f64; 2], &[f64]),
) -> Result<()> {
    let h = spec.integrator_step();
    let theta = [chi.theta[0].as_slice(), chi.theta[1].as_slice()];
    // elapsed time is irrelevant for time-invariant laws
    let elapsed = [0.0; 2];
    if !spec.has_jumps() {
        let mut x = chi.x.clone();
        let mut cost = [0.0; 2];
        sim::integrate(spec, &mut x, theta, elapsed, tau, h, &mut cost, None);
        visit(cost, &x);
        return Ok(());
    }
    let exp = rand_distr::Exp::new(spec.jump_rate_bound).map_err(|e| Error::Numerical(e.to_string()))?;
    let gamma = spec.discount;
    let mut u = [Action::new(), Action::new()];
    sim::actions(spec, theta, elapsed, &mut u);
    let mut post = vec![0.0; chi.x.len()];
    for k in 0..n_mc {
        let mut rng: SimRng = rng::seeded(rng::derive(seed, k as u64));
        let mut x = chi.x.clone();
        let mut cost = [0.0; 2];
        let mut t = 0.0;
        loop {
            let e: f64 = rand_distr::Distribution::sample(&exp, &mut rng);
            let dt = e.min(tau - t);
            let mut c = [0.0; 2];
            sim::integrate(spec, &mut x, theta, elapsed, dt, h, &mut c, None);
            let w = (-gamma * t).exp();
            cost[0] += w * c[0];
            cost[1] += w * c[1];
            t += dt;
            if t >= tau - TIE_TOL {
                break;
            }
            let lam = spec.jump_intensity.eval(&x, &u[0], &u[1]);
            if !(lam >= 0.0) || lam > spec.jump_rate_bound * (1.0 + 1e-12) {
                return Err(Error::Numerical(format!(
                    "jump intensity {lam} at x = {x:?} violates the declared bound"
                )));
            }
            let a: f64 = rand::Rng::random(&mut rng);
            if a * spec.jump_rate_bound < lam {
                spec.jump_kernel.sample(&spec.state_box, &x, &u[0], &u[1], &mut rng, &mut post);
                x.copy_from_slice(&post);
            }
        }
        visit(cost, &x);
    }
    Ok(())
}

fn endpoint(grid: &GridSpec, chi: &AugmentedState, tau: f64, x: &[f64]) -> Point {
    let mut end = chi.clone();
    end.x.copy_from_slice(x);
    for s in end.sigma.iter_mut() {
        *s -= tau;
        if *s < TIE_TOL {
            *s = 0.0;
        }
    }
    grid.flatten(&end)
}

impl FlowTable {
    pub(crate) fn build(spec: &GameSpec, grid: &GridSpec, opts: &OperatorOptions) -> Result<Self> {
        let nodes: Vec<usize> = (0..grid.len())
            .filter(|&i| {
                !grid.on_boundary(i, Player::One) && !grid.on_boundary(i, Player::Two)
            })
            .collect();
        let gamma = spec.discount;
        let rows: Vec<Result<(Vec<(u32, f64)>, [f64; 2], [f64; 2])>> = nodes
            .par_iter()
            .map(|&i| {
                let chi = grid.state(i);
                let tau = time_to_boundary(&chi);
                let disc = (-gamma * tau).exp();
                let mut entries: Vec<(u32, f64)> = Vec::new();
                let mut sum = [0.0; 2];
                let mut sq = [0.0; 2];
                let mut count = 0usize;
                let mut st = Stencil::new();
                flow_paths(spec, &chi, tau, opts.n_mc, rng::derive(opts.seed, i as u64), |c, x| {
                    grid.stencil_into(&endpoint(grid, &chi, tau, x), &mut st);
                    entries.extend(st.iter().map(|(j, w)| (*j, w * disc)));
                    for p in 0..2 {
                        sum[p] += c[p];
                        sq[p] += c[p] * c[p];
                    }
                    count += 1;
                })?;
                let nf = count as f64;
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
                for (j, w) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += w / nf,
                        _ => merged.push((j, w / nf)),
                    }
                }
                let mean = [sum[0] / nf, sum[1] / nf];
                let se = [0, 1].map(|p| {
                    if count > 1 {
                        ((sq[p] / nf - mean[p] * mean[p]).max(0.0) / (nf - 1.0)).sqrt()
                    } else {
                        0.0
                    }
                });
                Ok((merged, mean, se))
            })
            .collect();
        let mut block = AffineBlock::new();
        let mut cost = [Vec::with_capacity(nodes.len()), Vec::with_capacity(nodes.len())];
        let mut std_err = [Vec::with_capacity(nodes.len()), Vec::with_capacity(nodes.len())];
        for (&i, r) in nodes.iter().zip(rows) {
            let (entries, mean, se) = r?;
            block.push_row(0.0, &entries, u32::MAX);
            block.end_slot(i);
            for p in 0..2 {
                cost[p].push(mean[p]);
                std_err[p].push(se[p]);
            }
        }
        Ok(FlowTable { block, cost, std_err })
    }

    /// The flow block with the constants of player `p`.
    fn for_player(&self, p: Player) -> AffineBlock {
        let mut b = self.block.clone();
        b.consts = self.cost[p.index()].clone();
        b
    }
}

/// Candidate enumeration: dwell-major, then parameters in axis order, so the
/// first strict minimizer is the lexicographically smallest.
pub(crate) fn candidates(grid: &GridSpec, p: Player) -> Vec<(f64, &[f64])> {
    let mut out = Vec::new();
    for t in grid.dwell_candidates(p) {
        for th in grid.param_candidates(p) {
            out.push((*t, th.as_slice()));
        }
    }
    out
}

pub(crate) fn trigger_const(spec: &GameSpec, p: Player, dwell: f64) -> f64 {
    spec.player(p).trigger_cost.eval(dwell) * spec.trigger_cost_timing.factor(spec.discount, dwell)
}

fn reset(chi: &AugmentedState, p: Player, dwell: f64, param: &[f64]) -> AugmentedState {
    let mut out = chi.clone();
    out.sigma[p.index()] = dwell;
    out.theta[p.index()] = param.to_vec();
    out
}

/// Intervention rows for `actor` at `chi` (already carrying any opponent
/// reset), appended as one slot.
fn push_intervention_slot(
    spec: &GameSpec,
    grid: &GridSpec,
    block: &mut AffineBlock,
    node: usize,
    chi: &AugmentedState,
    actor: Player,
    st: &mut Stencil,
) {
    for (k, (t, th)) in candidates(grid, actor).into_iter().enumerate() {
        let post = reset(chi, actor, t, th);
        grid.stencil_into(&grid.flatten(&post), st);
        block.push_row(trigger_const(spec, actor, t), st, k as u32);
    }
    block.end_slot(node);
}

/// Decisions of a policy at every node on its owner's boundary, in node order.
pub(crate) fn boundary_decisions(
    spec: &GameSpec,
    grid: &GridSpec,
    owner: Player,
    policy: &dyn Policy,
) -> Result<Vec<(usize, Decision)>> {
    let nodes: Vec<usize> = (0..grid.len()).filter(|&i| grid.on_boundary(i, owner)).collect();
    let ps = spec.player(owner);
    nodes
        .into_par_iter()
        .map(|i| {
            let mut d = policy.decide(&grid.state(i))?;
            if !d.dwell.is_finite() || d.param.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite decision at node {i}")));
            }
            if d.param.len() != ps.param_dim() {
                return Err(structural(format!("decision at node {i} has the wrong parameter dimension")));
            }
            d.dwell = ps.dwell_bounds.clamp(d.dwell);
            ps.param_box.clamp(&mut d.param);
            Ok((i, d))
        })
        .collect()
}

fn leader_block(
    spec: &GameSpec,
    grid: &GridSpec,
    follower: Player,
    decisions: &[(usize, Decision)],
) -> AffineBlock {
    let leader = follower.other();
    let chunks: Vec<AffineBlock> = decisions
        .par_chunks(4096)
        .map(|chunk| {
            let mut b = AffineBlock::new();
            let mut st = Stencil::new();
            for (i, d) in chunk {
                let chi = grid.state(*i);
                let post = reset(&chi, leader, d.dwell, &d.param);
                if grid.on_boundary(*i, follower) {
                    push_intervention_slot(spec, grid, &mut b, *i, &post, follower, &mut st);
                } else {
                    grid.stencil_into(&grid.flatten(&post), &mut st);
                    b.push_row(0.0, &st, u32::MAX);
                    b.end_slot(*i);
                }
            }
            b
        })
        .collect();
    let mut out = AffineBlock::new();
    for c in chunks {
        out.append(c);
    }
    out
}

/// The follower's Bellman operator against a fixed leader policy.
#[derive(Clone, Debug)]
pub struct StackelbergOperator {
    grid: Arc<GridSpec>,
    follower: Player,
    discount: f64,
    beta: f64,
    flow: Arc<AffineBlock>,
    flow_std_err: Arc<Vec<f64>>,
    boundary: Arc<AffineBlock>,
    leader: Arc<AffineBlock>,
    leader_decisions: Arc<Vec<(usize, Decision)>>,
    /// The leader's flow costs and trigger costs, for evaluating its policy.
    leader_flow_cost: Arc<Vec<f64>>,
    leader_trigger: Arc<Vec<f64>>,
}

fn leader_trigger_consts(spec: &GameSpec, leader: Player, decisions: &[(usize, Decision)]) -> Vec<f64> {
    decisions.iter().map(|(_, d)| trigger_const(spec, leader, d.dwell)).collect()
}

/// Per-row weights of the follower's response at its decision slots: the
/// soft-min probabilities, or the indicator of the hard argmin.
#[derive(Clone, Debug)]
pub struct ResponseWeights {
    boundary: Vec<f64>,
    leader: Vec<f64>,
}

impl StackelbergOperator {
    /// Builds the operator with player 2 as follower.
    pub fn new(
        spec: &GameSpec,
        grid: Arc<GridSpec>,
        leader_policy: &dyn Policy,
        opts: &OperatorOptions,
    ) -> Result<Self> {
        Self::with_follower(spec, grid, Player::Two, leader_policy, opts)
    }

    pub fn with_follower(
        spec: &GameSpec,
        grid: Arc<GridSpec>,
        follower: Player,
        leader_policy: &dyn Policy,
        opts: &OperatorOptions,
    ) -> Result<Self> {
        spec.check_structure()?;
        spec.require_time_invariant()?;
        if !(spec.discount > 0.0) || !(spec.min_dwell() > 0.0) {
            return Err(Error::Precondition(
                "the operator needs a positive discount and positive dwell lower bounds".into(),
            ));
        }
        if grid.len() > u32::MAX as usize {
            return Err(structural("grid too large for 32-bit node indices"));
        }
        let flows = FlowTable::build(spec, &grid, opts)?;
        let flow = flows.for_player(follower);
        let boundary = Self::follower_block(spec, &grid, follower);
        let decisions = boundary_decisions(spec, &grid, follower.other(), leader_policy)?;
        let leader = leader_block(spec, &grid, follower, &decisions);
        Ok(StackelbergOperator {
            grid,
            follower,
            discount: spec.discount,
            beta: spec.contraction_modulus(),
            flow: Arc::new(flow),
            flow_std_err: Arc::new(flows.std_err[follower.index()].clone()),
            boundary: Arc::new(boundary),
            leader: Arc::new(leader),
            leader_trigger: Arc::new(leader_trigger_consts(spec, follower.other(), &decisions)),
            leader_decisions: Arc::new(decisions),
            leader_flow_cost: Arc::new(flows.cost[follower.other().index()].clone()),
        })
    }

    pub(crate) fn follower_block(spec: &GameSpec, grid: &GridSpec, follower: Player) -> AffineBlock {
        let nodes: Vec<usize> = (0..grid.len())
            .filter(|&i| classify(grid, i, follower) == NodeClass::FollowerBoundary)
            .collect();
        let chunks: Vec<AffineBlock> = nodes
            .par_chunks(4096)
            .map(|chunk| {
                let mut b = AffineBlock::new();
                let mut st = Stencil::new();
                for &i in chunk {
                    push_intervention_slot(spec, grid, &mut b, i, &grid.state(i), follower, &mut st);
                }
                b
            })
            .collect();
        let mut out = AffineBlock::new();
        for c in chunks {
            out.append(c);
        }
        out
    }

    /// Same flows and follower rows, new leader policy.
    pub fn with_leader(&self, spec: &GameSpec, leader_policy: &dyn Policy) -> Result<Self> {
        let decisions = boundary_decisions(spec, &self.grid, self.follower.other(), leader_policy)?;
        Ok(self.with_leader_decisions(spec, decisions))
    }

    pub(crate) fn with_leader_decisions(&self, spec: &GameSpec, decisions: Vec<(usize, Decision)>) -> Self {
        let leader = leader_block(spec, &self.grid, self.follower, &decisions);
        StackelbergOperator {
            leader: Arc::new(leader),
            leader_trigger: Arc::new(leader_trigger_consts(spec, self.follower.other(), &decisions)),
            leader_decisions: Arc::new(decisions),
            ..self.clone()
        }
    }

    /// The follower's response weights to value table `omega`.
    pub fn response_weights(&self, omega: &[f64], mode: MinMode) -> ResponseWeights {
        let weights = |b: &AffineBlock| -> Vec<f64> {
            let per: Vec<Vec<f64>> = (0..b.len())
                .into_par_iter()
                .map_init(
                    || (Vec::new(), Vec::new()),
                    |(q, p), s| {
                        b.row_values(s, omega, q);
                        min_weights(q, mode, p);
                        p.clone()
                    },
                )
                .collect();
            per.concat()
        };
        ResponseWeights { boundary: weights(&self.boundary), leader: weights(&self.leader) }
    }

    /// `base` with the leader-block weights recomputed for this operator.
    pub fn response_weights_leader(&self, base: &ResponseWeights, omega: &[f64], mode: MinMode) -> ResponseWeights {
        let b = &*self.leader;
        let per: Vec<Vec<f64>> = (0..b.len())
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(q, p), s| {
                    b.row_values(s, omega, q);
                    min_weights(q, mode, p);
                    p.clone()
                },
            )
            .collect();
        ResponseWeights { boundary: base.boundary.clone(), leader: per.concat() }
    }

    /// Leader's policy evaluation: out = L v, where L charges the leader's
    /// running and trigger costs and follows the follower's weighted
    /// response. Follower trigger costs are not the leader's.
    pub fn leader_eval_apply(&self, w: &ResponseWeights, v: &[f64], out: &mut [f64]) {
        let f = &self.flow;
        let flow: Vec<f64> = (0..f.len())
            .into_par_iter()
            .map(|s| {
                let r = f.row_ptr[s];
                f.row_value(r, v) - f.consts[r] + self.leader_flow_cost[s]
            })
            .collect();
        for (s, val) in flow.into_iter().enumerate() {
            out[f.nodes[s] as usize] = val;
        }
        let mixed = |b: &AffineBlock, p: &[f64], consts: Option<&[f64]>| -> Vec<f64> {
            (0..b.len())
                .into_par_iter()
                .map(|s| {
                    let mut acc = consts.map_or(0.0, |c| c[s]);
                    for r in b.rows(s) {
                        if p[r] != 0.0 {
                            acc += p[r] * (b.row_value(r, v) - b.consts[r]);
                        }
                    }
                    acc
                })
                .collect()
        };
        for (s, val) in mixed(&self.boundary, &w.boundary, None).into_iter().enumerate() {
            out[self.boundary.nodes[s] as usize] = val;
        }
        for (s, val) in mixed(&self.leader, &w.leader, Some(&self.leader_trigger)).into_iter().enumerate() {
            out[self.leader.nodes[s] as usize] = val;
        }
    }

    /// out = L^T z.
    pub fn leader_eval_transpose(&self, w: &ResponseWeights, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let acc = |b: &AffineBlock, p: Option<&[f64]>, out: &mut [f64]| {
            for s in 0..b.len() {
                let zs = z[b.nodes[s] as usize];
                if zs == 0.0 {
                    continue;
                }
                for r in b.rows(s) {
                    let c = zs * p.map_or(1.0, |p| p[r]);
                    if c == 0.0 {
                        continue;
                    }
                    for e in b.ent_ptr[r]..b.ent_ptr[r + 1] {
                        out[b.idx[e] as usize] += c * b.w[e];
                    }
                }
            }
        };
        acc(&self.flow, None, out);
        acc(&self.boundary, Some(&w.boundary), out);
        acc(&self.leader, Some(&w.leader), out);
    }

    /// Values of the leader's evaluation rows at the leader-block slots.
    pub(crate) fn leader_eval_values(&self, w: &ResponseWeights, v: &[f64]) -> Vec<f64> {
        let b = &self.leader;
        (0..b.len())
            .into_par_iter()
            .map(|s| {
                let mut acc = self.leader_trigger[s];
                for r in b.rows(s) {
                    if w.leader[r] != 0.0 {
                        acc += w.leader[r] * (b.row_value(r, v) - b.consts[r]);
                    }
                }
                acc
            })
            .collect()
    }

    /// Fixed point of the leader's evaluation operator.
    pub fn leader_eval_solve(
        &self,
        w: &ResponseWeights,
        warm: Option<&[f64]>,
        tol: f64,
        max_iters: usize,
    ) -> (ValueGrid, FixedPointReport) {
        let mut v = warm.map_or_else(|| vec![0.0; self.grid.len()], |x| x.to_vec());
        let mut next = vec![0.0; v.len()];
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..max_iters {
            self.leader_eval_apply(w, &v, &mut next);
            let r = v.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            std::mem::swap(&mut v, &mut next);
            residuals.push(r);
            if r < tol {
                converged = true;
                break;
            }
        }
        let report = FixedPointReport::new(residuals, converged, self.beta, tol);
        (ValueGrid { grid: self.grid.clone(), values: v }, report)
    }

    /// z^T d(L v)/d omega through the follower's soft-min weights. Zero in
    /// hard mode.
    pub fn leader_eval_omega_grad(&self, omega: &[f64], mode: MinMode, v: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; omega.len()];
        let temperature = match mode {
            MinMode::Hard => return out,
            MinMode::Soft { temperature } => temperature,
        };
        let mut q = Vec::new();
        let mut p = Vec::new();
        let mut a = Vec::new();
        for b in [&*self.boundary, &*self.leader] {
            for s in 0..b.len() {
                let zs = z[b.nodes[s] as usize];
                let rows = b.rows(s);
                if zs == 0.0 || rows.len() < 2 {
                    continue;
                }
                b.row_values(s, omega, &mut q);
                min_weights(&q, mode, &mut p);
                a.clear();
                a.extend(rows.clone().map(|r| b.row_value(r, v) - b.consts[r]));
                let mean: f64 = p.iter().zip(&a).map(|(x, y)| x * y).sum();
                for (k, r) in rows.enumerate() {
                    let c = -zs * p[k] * (a[k] - mean) / temperature;
                    if c == 0.0 {
                        continue;
                    }
                    for e in b.ent_ptr[r]..b.ent_ptr[r + 1] {
                        out[b.idx[e] as usize] += c * b.w[e];
                    }
                }
            }
        }
        out
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn follower(&self) -> Player {
        self.follower
    }

    /// Two-step contraction modulus e^{-gamma T_min}.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn leader_decisions(&self) -> &[(usize, Decision)] {
        &self.leader_decisions
    }

    /// Number of stored weights, a proxy for memory and sweep cost.
    pub fn entries(&self) -> usize {
        self.flow.entries() + self.boundary.entries() + self.leader.entries()
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64], mode: MinMode) {
        self.flow.eval_into(v, mode, out);
        self.boundary.eval_into(v, mode, out);
        self.leader.eval_into(v, mode, out);
    }

    pub fn apply(&self, v: &ValueGrid, mode: MinMode) -> Result<ValueGrid> {
        if *v.grid != *self.grid {
            return Err(structural("value table and operator are on different grids"));
        }
        let mut out = vec![0.0; v.values.len()];
        self.apply_into(&v.values, &mut out, mode);
        Ok(ValueGrid { grid: self.grid.clone(), values: out })
    }

    /// Values of the leader-dependent rows only, in `leader_decisions` order.
    pub(crate) fn leader_values(&self, v: &[f64], mode: MinMode) -> Vec<f64> {
        self.leader.eval(v, mode).into_iter().map(|(val, _)| val).collect()
    }

    /// Standard error of the Monte Carlo flow constant per flow node.
    pub fn flow_std_err(&self) -> &[f64] {
        &self.flow_std_err
    }

    /// out = J^T y where J is the Jacobian of the operator at v.
    pub fn jacobian_transpose_apply(&self, v: &[f64], mode: MinMode, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.flow.transpose_acc(v, mode, y, out);
        self.boundary.transpose_acc(v, mode, y, out);
        self.leader.transpose_acc(v, mode, y, out);
    }

    /// Dense Jacobian; only for small grids.
    pub fn jacobian_dense(&self, v: &[f64], mode: MinMode) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut out = vec![vec![0.0; n]; n];
        self.flow.jacobian_into(v, mode, &mut out);
        self.boundary.jacobian_into(v, mode, &mut out);
        self.leader.jacobian_into(v, mode, &mut out);
        out
    }

    /// Follower nodes where the best and second-best candidate values differ
    /// by less than `margin`, with that gap.
    pub fn ambiguous_nodes(&self, v: &[f64], margin: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut q = Vec::new();
        for b in [&*self.boundary, &*self.leader] {
            for s in 0..b.len() {
                let rows = b.rows(s);
                if rows.len() < 2 {
                    continue;
                }
                b.row_values(s, v, &mut q);
                let (_, best) = min_rows(&q, MinMode::Hard);
                let gap = q
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != best)
                    .map(|(_, x)| x - q[best])
                    .fold(f64::INFINITY, f64::min);
                if gap < margin {
                    out.push((b.nodes[s] as usize, gap));
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Follower decisions at every node of its boundary slice. Under the
    /// soft mode the decision is the softmax-weighted mean candidate.
    pub fn greedy_policy(&self, v: &[f64], mode: MinMode) -> TriggerPolicy {
        let grid = &self.grid;
        let cands = candidates(grid, self.follower);
        let mut decisions = vec![Decision::new(0.0, Vec::new()); slice_len(grid, self.follower)];
        let mut q = Vec::new();
        let mut p = Vec::new();
        for b in [&*self.boundary, &*self.leader] {
            for s in 0..b.len() {
                let node = b.nodes[s] as usize;
                if !grid.on_boundary(node, self.follower) {
                    continue;
                }
                b.row_values(s, v, &mut q);
                min_weights(&q, mode, &mut p);
                let rows = b.rows(s);
                let m = grid.param_dim(self.follower);
                let mut dwell = 0.0;
                let mut param = vec![0.0; m];
                for (k, r) in rows.enumerate() {
                    if p[k] == 0.0 {
                        continue;
                    }
                    let (t, th) = cands[b.choice[r] as usize];
                    dwell += p[k] * t;
                    for j in 0..m {
                        param[j] += p[k] * th[j];
                    }
                }
                decisions[slice_index(grid, self.follower, node)] = Decision::new(dwell, param);
            }
        }
        TriggerPolicy { owner: self.follower, grid: grid.clone(), decisions }
    }

    /// Value iteration from `v0` until the sup-norm residual drops below tol.
    pub fn solve(
        &self,
        v0: Option<&ValueGrid>,
        tol: f64,
        max_iters: usize,
        mode: MinMode,
    ) -> Result<(ValueGrid, FixedPointReport)> {
        if !(tol > 0.0) {
            return Err(Error::Precondition("tolerance must be positive".into()));
        }
        let mut v = match v0 {
            Some(v) => {
                if *v.grid != *self.grid {
                    return Err(structural("warm start lives on a different grid"));
                }
                v.values.clone()
            }
            None => vec![0.0; self.grid.len()],
        };
        let mut w = vec![0.0; v.len()];
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..max_iters {
            self.apply_into(&v, &mut w, mode);
            let r = v.iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            std::mem::swap(&mut v, &mut w);
            residuals.push(r);
            if r < tol {
                converged = true;
                break;
            }
        }
        let report = FixedPointReport::new(residuals, converged, self.beta, tol);
        if !converged {
            log::warn!(
                "value iteration stopped after {} sweeps at residual {:.3e}",
                report.iterations,
                report.final_residual
            );
        }
        Ok((ValueGrid { grid: self.grid.clone(), values: v }, report))
    }
}

pub(crate) fn slice_len(grid: &GridSpec, owner: Player) -> usize {
    grid.len() / grid.axes()[grid.sigma_axis(owner)].count
}

/// Position of a node in its owner's sigma = 0 slice.
pub(crate) fn slice_index(grid: &GridSpec, owner: Player, node: usize) -> usize {
    let a = grid.sigma_axis(owner);
    let stride = grid.strides()[a];
    let block = stride * grid.axes()[a].count;
    (node / block) * stride + node % stride
}

/// Tabulated trigger policy over the owner's boundary slice, queried by
/// nearest node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriggerPolicy {
    pub owner: Player,
    pub grid: Arc<GridSpec>,
    pub decisions: Vec<Decision>,
}

impl TriggerPolicy {
    /// Decision at the nearest boundary node to `chi`.
    pub fn lookup(&self, chi: &AugmentedState) -> Result<&Decision> {
        let mut pt = self.grid.flatten(chi);
        pt[self.grid.sigma_axis(self.owner)] = 0.0;
        let node = self.grid.nearest(&pt);
        self.decisions
            .get(slice_index(&self.grid, self.owner, node))
            .ok_or_else(|| structural(format!("no decision stored for node {node}")))
    }

    pub fn at_node(&self, node: usize) -> Result<&Decision> {
        if !self.grid.on_boundary(node, self.owner) {
            return Err(structural(format!("node {node} is not on the boundary of {}", self.owner)));
        }
        Ok(&self.decisions[slice_index(&self.grid, self.owner, node)])
    }

    /// Tabulates any policy on the owner's boundary slice.
    pub fn tabulate(spec: &GameSpec, grid: Arc<GridSpec>, owner: Player, policy: &dyn Policy) -> Result<Self> {
        let mut decisions = vec![Decision::new(0.0, Vec::new()); slice_len(&grid, owner)];
        for (i, d) in boundary_decisions(spec, &grid, owner, policy)? {
            decisions[slice_index(&grid, owner, i)] = d;
        }
        Ok(TriggerPolicy { owner, grid, decisions })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let p: TriggerPolicy = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if p.decisions.len() != slice_len(&p.grid, p.owner) {
            return Err(structural("policy table length does not match its grid"));
        }
        Ok(p)
    }
}

impl Policy for TriggerPolicy {
    fn decide(&self, chi: &AugmentedState) -> Result<Decision> {
        self.lookup(chi).cloned()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Sup-norm change per sweep.
    pub residuals: Vec<f64>,
    pub final_residual: f64,
    pub converged: bool,
    pub tol: f64,
    pub beta: f64,
    /// r_{k+2} / r_k: contraction over two sweeps.
    pub two_sweep_ratios: Vec<f64>,
    /// r_{k+1} / r_k, informational.
    pub one_step_ratios: Vec<f64>,
}

impl FixedPointReport {
    pub fn new(residuals: Vec<f64>, converged: bool, beta: f64, tol: f64) -> Self {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let two = residuals.windows(3).map(|w| ratio(w[2], w[0])).collect();
        let one = residuals.windows(2).map(|w| ratio(w[1], w[0])).collect();
        FixedPointReport {
            iterations: residuals.len(),
            final_residual: residuals.last().copied().unwrap_or(0.0),
            residuals,
            converged,
            tol,
            beta,
            two_sweep_ratios: two,
            one_step_ratios: one,
        }
    }

    /// Sweep count guaranteed by the two-step contraction:
    /// 2 ceil(log(tol / r_0) / log beta) + 10.
    pub fn sweep_bound(&self) -> Option<usize> {
        let r0 = *self.residuals.first()?;
        if r0 <= self.tol {
            return Some(10);
        }
        Some(2 * ((self.tol / r0).ln() / self.beta.ln()).ceil() as usize + 10)
    }
}

pub struct FollowerSolution {
    pub value: ValueGrid,
    pub policy: TriggerPolicy,
    pub report: FixedPointReport,
    pub operator: StackelbergOperator,
}

/// Value iteration for player 2 against `pi1` from v = 0. A run that hits
/// `max_iters` returns its last iterate with `report.converged == false`.
pub fn value_iteration(
    spec: &GameSpec,
    pi1: &dyn Policy,
    grid: Arc<GridSpec>,
    tol: f64,
    max_iters: usize,
) -> Result<FollowerSolution> {
    let op = StackelbergOperator::new(spec, grid, pi1, &OperatorOptions::default())?;
    solve_with(op, None, tol, max_iters)
}

pub fn solve_with(
    op: StackelbergOperator,
    v0: Option<&ValueGrid>,
    tol: f64,
    max_iters: usize,
) -> Result<FollowerSolution> {
    let (value, report) = op.solve(v0, tol, max_iters, MinMode::Hard)?;
    let policy = op.greedy_policy(&value.values, MinMode::Hard);
    Ok(FollowerSolution { value, policy, report, operator: op })
}

/// One application of the follower operator.
pub fn bellman_sweep(spec: &GameSpec, v: &ValueGrid, pi1: &dyn Policy) -> Result<ValueGrid> {
    let op = StackelbergOperator::new(spec, v.grid.clone(), pi1, &OperatorOptions::default())?;
    op.apply(v, MinMode::Hard)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemigroupEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// E[int_0^tau e^{-gamma s} r_p ds + e^{-gamma tau} v(chi(tau))] with
/// tau = tau(chi): one RK4 pass without jumps, Monte Carlo otherwise.
pub fn semigroup_apply(
    spec: &GameSpec,
    v: &ValueGrid,
    chi: &AugmentedState,
    player: Player,
    opts: &OperatorOptions,
) -> Result<SemigroupEstimate> {
    spec.require_time_invariant()?;
    let tau = time_to_boundary(chi);
    let disc = (-spec.discount * tau).exp();
    let mut vals = Vec::new();
    flow_paths(spec, chi, tau, opts.n_mc, opts.seed, |c, x| {
        vals.push(c[player.index()] + disc * v.interpolate_point(&endpoint(&v.grid, chi, tau, x)));
    })?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std_err = if vals.len() > 1 {
        (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(SemigroupEstimate { mean, std_err })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionResult {
    pub value: f64,
    pub dwell: f64,
    pub param: Vec<f64>,
}

/// min over the grid's candidates of g_p(T) + v(reset). Ties go to the
/// smallest dwell, then the smallest parameter in axis order.
pub fn intervene(spec: &GameSpec, v: &ValueGrid, chi: &AugmentedState, player: Player) -> Result<InterventionResult> {
    if chi.sigma[player.index()] > TIE_TOL {
        return Err(Error::Precondition(format!("{player} is not on its boundary")));
    }
    let cands = candidates(&v.grid, player);
    if cands.is_empty() {
        return Err(structural("empty candidate set"));
    }
    let mut best: Option<InterventionResult> = None;
    for (t, th) in cands {
        let q = trigger_const(spec, player, t) + v.interpolate(&reset(chi, player, t, th));
        if best.as_ref().is_none_or(|b| q < b.value) {
            best = Some(InterventionResult { value: q, dwell: t, param: th.to_vec() });
        }
    }
    Ok(best.expect("non-empty candidates"))
}

/// Value at the leader's reset: v(x, T_1, theta_1, sigma_2, theta_2) with
/// (T_1, theta_1) = pi1(chi). No cost is charged to the follower.
pub fn leader_boundary_update(v: &ValueGrid, chi: &AugmentedState, pi1: &dyn Policy) -> Result<f64> {
    if chi.sigma[0] > TIE_TOL {
        return Err(Error::Precondition("the leader is not on its boundary".into()));
    }
    let d = pi1.decide(chi)?;
    Ok(v.interpolate(&reset(chi, Player::One, d.dwell, &d.param)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub chi0: AugmentedState,
    pub value: f64,
    pub mc_mean: f64,
    pub mc_std_err: f64,
}

/// Monte Carlo cost to the follower of its extracted policy against the
/// leader, next to the interpolated fixed-point value, per initial state.
pub fn rollout_consistency(
    spec: &GameSpec,
    leader: &dyn Policy,
    sol: &FollowerSolution,
    chi0s: &[AugmentedState],
    n_rollouts: usize,
    t_max: f64,
    seed: u64,
) -> Result<Vec<ConsistencyRow>> {
    let f = sol.operator.follower();
    let policies: [&dyn Policy; 2] = match f {
        Player::Two => [leader, &sol.policy],
        Player::One => [&sol.policy, leader],
    };
    chi0s
        .par_iter()
        .enumerate()
        .map(|(k, chi0)| {
            let costs: Vec<f64> = (0..n_rollouts)
                .map(|r| {
                    let s = rng::derive(rng::derive(seed, k as u64), r as u64);
                    sim::rollout(spec, chi0, policies, &RolloutOptions::new(t_max, s))
                        .map(|t| t.total_cost(f))
                })
                .collect::<Result<_>>()?;
            let n = costs.len() as f64;
            let mean = costs.iter().sum::<f64>() / n;
            let se = if costs.len() > 1 {
                (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            Ok(ConsistencyRow {
                chi0: chi0.clone(),
                value: sol.value.interpolate(chi0),
                mc_mean: mean,
                mc_std_err: se,
            })
        })
        .collect()
}
