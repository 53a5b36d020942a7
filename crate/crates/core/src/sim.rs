//! Simulation of the augmented process: RK4 flow with unit-rate clock decay,
//! Poisson thinning for jumps, and trigger events under given policies.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{time_to_boundary, Action, AugmentedState, GameSpec, Player};
use crate::rng::{self, SimRng};

/// Clock values at or below this are on the boundary.
pub const TIE_TOL: f64 = 1e-12;

/// A trigger decision (T, theta).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub dwell: f64,
    pub param: Vec<f64>,
}

impl Decision {
    pub fn new(dwell: f64, param: Vec<f64>) -> Self {
        Decision { dwell, param }
    }
}

/// A feedback trigger policy, queried when the owner's clock expires.
/// Implementations must be pure: the same state gives the same decision.
pub trait Policy: Send + Sync {
    fn decide(&self, chi: &AugmentedState) -> Result<Decision>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn decide(&self, chi: &AugmentedState) -> Result<Decision> {
        (**self).decide(chi)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn decide(&self, chi: &AugmentedState) -> Result<Decision> {
        (**self).decide(chi)
    }
}

#[derive(Clone, Debug)]
pub struct ConstantPolicy(pub Decision);

impl Policy for ConstantPolicy {
    fn decide(&self, _: &AugmentedState) -> Result<Decision> {
        Ok(self.0.clone())
    }
}

/// Returns a fixed list of decisions in order, then repeats `then`.
/// Stateful, so use a fresh instance per rollout.
#[derive(Debug)]
pub struct ScheduledPolicy {
    decisions: Vec<Decision>,
    then: Decision,
    calls: AtomicUsize,
}

impl ScheduledPolicy {
    pub fn new(decisions: Vec<Decision>, then: Decision) -> Self {
        ScheduledPolicy { decisions, then, calls: AtomicUsize::new(0) }
    }
}

impl Policy for ScheduledPolicy {
    fn decide(&self, _: &AugmentedState) -> Result<Decision> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.decisions.get(k).unwrap_or(&self.then).clone())
    }
}

pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&AugmentedState) -> Result<Decision> + Send + Sync,
{
    fn decide(&self, chi: &AugmentedState) -> Result<Decision> {
        (self.0)(chi)
    }
}

/// Current actions of both players.
pub(crate) fn actions(
    spec: &GameSpec,
    theta: [&[f64]; 2],
    elapsed: [f64; 2],
    out: &mut [Action; 2],
) {
    for i in 0..2 {
        spec.players[i].control_law.eval(elapsed[i], theta[i], &mut out[i]);
    }
}

/// Integrates x over `dt` from local time 0 with fixed RK4 steps of at most
/// `h`, accumulating `cost[i] += int_0^dt e^{-gamma s} r_i ds`. Returns the
/// number of box clamps applied. `observe(s, x)` runs after every step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate(
    spec: &GameSpec,
    x: &mut [f64],
    theta: [&[f64]; 2],
    elapsed0: [f64; 2],
    dt: f64,
    h: f64,
    cost: &mut [f64; 2],
    mut observe: Option<&mut dyn FnMut(f64, &[f64])>,
) -> usize {
    if dt <= 0.0 {
        return 0;
    }
    let n = x.len();
    let steps = ((dt / h) - 1e-9).ceil().max(1.0) as usize;
    let step = dt / steps as f64;
    let gamma = spec.discount;
    let invariant = [
        spec.players[0].control_law.time_invariant(),
        spec.players[1].control_law.time_invariant(),
    ];
    let mut u = [Action::new(), Action::new()];
    actions(spec, theta, elapsed0, &mut u);

    // y = (x, c1, c2); k holds the four stage derivatives.
    let dim = n + 2;
    let mut y = vec![0.0; dim];
    let mut ys = vec![0.0; dim];
    let mut k = vec![0.0; 4 * dim];
    y[..n].copy_from_slice(x);
    let mut clamps = 0;

    let rhs = |s: f64, y: &[f64], out: &mut [f64], u: &mut [Action; 2]| {
        for i in 0..2 {
            if !invariant[i] {
                spec.players[i].control_law.eval(elapsed0[i] + s, theta[i], &mut u[i]);
            }
        }
        spec.drift.eval(&y[..n], &u[0], &u[1], &mut out[..n]);
        let w = (-gamma * s).exp();
        for i in 0..2 {
            out[n + i] = w * spec.players[i].running_cost.eval(&y[..n], &u[0], &u[1]);
        }
    };

    for j in 0..steps {
        let s0 = j as f64 * step;
        let (k1, rest) = k.split_at_mut(dim);
        let (k2, rest) = rest.split_at_mut(dim);
        let (k3, k4) = rest.split_at_mut(dim);
        rhs(s0, &y, k1, &mut u);
        for i in 0..dim {
            ys[i] = y[i] + 0.5 * step * k1[i];
        }
        rhs(s0 + 0.5 * step, &ys, k2, &mut u);
        for i in 0..dim {
            ys[i] = y[i] + 0.5 * step * k2[i];
        }
        rhs(s0 + 0.5 * step, &ys, k3, &mut u);
        for i in 0..dim {
            ys[i] = y[i] + step * k3[i];
        }
        rhs(s0 + step, &ys, k4, &mut u);
        for i in 0..dim {
            y[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if spec.state_box.clamp(&mut y[..n]) {
            clamps += 1;
        }
        if let Some(f) = observe.as_mut() {
            f(if j + 1 == steps { dt } else { s0 + step }, &y[..n]);
        }
    }
    x.copy_from_slice(&y[..n]);
    cost[0] += y[n];
    cost[1] += y[n + 1];
    clamps
}

fn decrement_clocks(chi: &mut AugmentedState, dt: f64) {
    for s in chi.sigma.iter_mut() {
        *s -= dt;
        if *s < TIE_TOL {
            *s = 0.0;
        }
    }
}

/// Advances chi by `dt` along the deterministic flow. `committed[i]` is the
/// dwell player i committed to at its last trigger, so elapsed time is
/// `committed[i] - sigma[i]`.
pub fn flow_step(
    spec: &GameSpec,
    chi: &AugmentedState,
    committed: [f64; 2],
    dt: f64,
) -> Result<AugmentedState> {
    let tau = time_to_boundary(chi);
    if !(dt > 0.0) || dt > tau + TIE_TOL {
        return Err(Error::Precondition(format!(
            "flow step {dt} must lie in (0, {tau}], the time to the next boundary"
        )));
    }
    let mut out = chi.clone();
    let elapsed = [committed[0] - chi.sigma[0], committed[1] - chi.sigma[1]];
    let mut cost = [0.0; 2];
    let h = spec.integrator_step();
    integrate(spec, &mut out.x, [&chi.theta[0], &chi.theta[1]], elapsed, dt, h, &mut cost, None);
    decrement_clocks(&mut out, dt);
    Ok(out)
}

/// Draws the first accepted jump within `horizon` by thinning against the
/// declared bound, flowing the state between candidates. Returns the jump
/// time (relative to chi) and the post-jump state.
pub fn sample_jump_time(
    spec: &GameSpec,
    chi: &AugmentedState,
    committed: [f64; 2],
    horizon: f64,
    seed: u64,
) -> Result<Option<(f64, AugmentedState)>> {
    let tau = time_to_boundary(chi);
    if horizon > tau + TIE_TOL {
        return Err(Error::Precondition(format!(
            "horizon {horizon} exceeds the time to the next boundary {tau}"
        )));
    }
    if !spec.has_jumps() || horizon <= 0.0 {
        return Ok(None);
    }
    let mut rng = rng::seeded(seed);
    let mut state = chi.clone();
    let mut elapsed = [committed[0] - chi.sigma[0], committed[1] - chi.sigma[1]];
    let h = spec.integrator_step();
    let exp = Exp::new(spec.jump_rate_bound).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut done = 0.0;
    let mut cost = [0.0; 2];
    let mut u = [Action::new(), Action::new()];
    loop {
        let e: f64 = exp.sample(&mut rng);
        if done + e >= horizon {
            return Ok(None);
        }
        integrate(spec, &mut state.x, [&chi.theta[0], &chi.theta[1]], elapsed, e, h, &mut cost, None);
        done += e;
        elapsed[0] += e;
        elapsed[1] += e;
        actions(spec, [&chi.theta[0], &chi.theta[1]], elapsed, &mut u);
        if thin_accept(spec, &state.x, &u, &mut rng)? {
            let mut post = vec![0.0; state.x.len()];
            spec.jump_kernel.sample(&spec.state_box, &state.x, &u[0], &u[1], &mut rng, &mut post);
            state.x = post;
            decrement_clocks(&mut state, done);
            return Ok(Some((done, state)));
        }
    }
}

fn thin_accept(spec: &GameSpec, x: &[f64], u: &[Action; 2], rng: &mut SimRng) -> Result<bool> {
    let lam = spec.jump_intensity.eval(x, &u[0], &u[1]);
    let bound = spec.jump_rate_bound;
    if !(lam >= 0.0) || lam > bound * (1.0 + 1e-12) {
        return Err(Error::Numerical(format!(
            "jump intensity {lam} at x = {x:?} violates the declared bound {bound}"
        )));
    }
    let v: f64 = rng.random();
    Ok(v * bound < lam)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: AugmentedState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub t: f64,
    pub player: Player,
    /// Both clocks expired together; both players saw `pre_state`.
    pub simultaneous: bool,
    pub dwell: f64,
    pub param: Vec<f64>,
    /// g_i(dwell), undiscounted.
    pub cost: f64,
    pub discounted_cost: f64,
    pub pre_state: AugmentedState,
    pub post_state: AugmentedState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    pub pre_state: AugmentedState,
    pub post_state: AugmentedState,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<TriggerEvent>,
    pub jumps: Vec<JumpRecord>,
    pub discounted_running_cost: [f64; 2],
    pub discounted_trigger_cost: [f64; 2],
    pub clamp_count: usize,
    pub t_end: f64,
}

impl Trajectory {
    pub fn total_cost(&self, p: Player) -> f64 {
        self.discounted_running_cost[p.index()] + self.discounted_trigger_cost[p.index()]
    }

    pub fn events_of(&self, p: Player) -> impl Iterator<Item = &TriggerEvent> {
        self.events.iter().filter(move |e| e.player == p)
    }

    fn push_sample(&mut self, t: f64, state: &AugmentedState) {
        match self.samples.last_mut() {
            Some(last) if last.t >= t => last.state = state.clone(),
            _ => self.samples.push(Sample { t, state: state.clone() }),
        }
    }

    /// CSV with columns t, x0.., sigma1, sigma2, theta1_0.., theta2_0...
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = self.samples.first() else {
            w.write_record(["t"])?;
            w.flush()?;
            return Ok(());
        };
        let mut header = vec!["t".to_string()];
        header.extend((0..first.state.x.len()).map(|i| format!("x{i}")));
        header.push("sigma1".into());
        header.push("sigma2".into());
        for p in 0..2 {
            header.extend((0..first.state.theta[p].len()).map(|i| format!("theta{}_{i}", p + 1)));
        }
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.t];
            row.extend_from_slice(&s.state.x);
            row.extend_from_slice(&s.state.sigma);
            row.extend_from_slice(&s.state.theta[0]);
            row.extend_from_slice(&s.state.theta[1]);
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_json<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, &self.events)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        self.write_events_json(std::fs::File::create(dir.join(format!("{stem}_events.json")))?)
    }
}

#[derive(Clone, Debug)]
pub struct RolloutOptions {
    pub t_max: f64,
    pub seed: u64,
    /// Record a sample after every integrator step instead of per segment.
    pub dense: bool,
}

impl RolloutOptions {
    pub fn new(t_max: f64, seed: u64) -> Self {
        RolloutOptions { t_max, seed, dense: false }
    }
}

/// Resumable simulator state, enough to continue a run bit-for-bit.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub t: f64,
    pub chi: AugmentedState,
    pub committed: [f64; 2],
    rng: SimRng,
    pending: Option<f64>,
}

pub struct Simulator<'a> {
    spec: &'a GameSpec,
    policies: [&'a dyn Policy; 2],
    chi: AugmentedState,
    committed: [f64; 2],
    t: f64,
    rng: SimRng,
    /// Time until the next thinning candidate, carried across segments so
    /// that splitting a run does not change the random stream.
    pending: Option<f64>,
    h: f64,
    dense: bool,
    traj: Trajectory,
}

impl<'a> Simulator<'a> {
    pub fn new(
        spec: &'a GameSpec,
        chi0: AugmentedState,
        policies: [&'a dyn Policy; 2],
        seed: u64,
    ) -> Result<Self> {
        spec.check_structure()?;
        if !(spec.min_dwell() > 0.0) {
            return Err(Error::Precondition("dwell lower bounds must be positive".into()));
        }
        chi0.check(spec, 1e-9)?;
        let committed = chi0.sigma;
        let mut sim = Simulator {
            spec,
            policies,
            chi: chi0,
            committed,
            t: 0.0,
            rng: rng::seeded(rng::substream(seed, "rollout")),
            pending: None,
            h: spec.integrator_step(),
            dense: false,
            traj: Trajectory::default(),
        };
        sim.traj.push_sample(0.0, &sim.chi.clone());
        Ok(sim)
    }

    pub fn dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            t: self.t,
            chi: self.chi.clone(),
            committed: self.committed,
            rng: self.rng.clone(),
            pending: self.pending,
        }
    }

    /// Continues from a checkpoint with a fresh ledger. The local clock
    /// restarts at zero, so costs are discounted relative to `cp.t`.
    pub fn from_checkpoint(
        spec: &'a GameSpec,
        policies: [&'a dyn Policy; 2],
        cp: Checkpoint,
    ) -> Self {
        let mut sim = Simulator {
            spec,
            policies,
            chi: cp.chi,
            committed: cp.committed,
            t: 0.0,
            rng: cp.rng,
            pending: cp.pending,
            h: spec.integrator_step(),
            dense: false,
            traj: Trajectory::default(),
        };
        sim.traj.push_sample(0.0, &sim.chi.clone());
        sim
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &AugmentedState {
        &self.chi
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(mut self) -> Trajectory {
        self.traj.t_end = self.t;
        if self.traj.clamp_count > 0 {
            warn!("state left the box {} times and was clamped", self.traj.clamp_count);
        }
        self.traj
    }

    /// Runs until time `t_end`. Decisions due at `t_end` are handled before
    /// returning.
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        loop {
            self.handle_boundaries()?;
            let remaining = t_end - self.t;
            if remaining <= TIE_TOL {
                break;
            }
            let horizon = time_to_boundary(&self.chi).min(remaining);
            self.advance(horizon)?;
        }
        self.traj.t_end = self.t;
        Ok(())
    }

    /// Handles decisions due now, then advances to the next decision epoch,
    /// jump, or `t_end`. Returns false once `t_end` is reached.
    pub fn step(&mut self, t_end: f64) -> Result<bool> {
        self.handle_boundaries()?;
        let remaining = t_end - self.t;
        if remaining <= TIE_TOL {
            self.traj.t_end = self.t;
            return Ok(false);
        }
        let horizon = time_to_boundary(&self.chi).min(remaining);
        self.advance(horizon)?;
        self.traj.t_end = self.t;
        Ok(true)
    }

    fn handle_boundaries(&mut self) -> Result<()> {
        let acting: Vec<Player> =
            Player::BOTH.into_iter().filter(|p| self.chi.sigma[p.index()] <= TIE_TOL).collect();
        if acting.is_empty() {
            return Ok(());
        }
        let pre = self.chi.clone();
        let mut decisions = Vec::with_capacity(2);
        for &p in &acting {
            let d = self.policies[p.index()].decide(&pre)?;
            decisions.push(self.sanitize(p, d)?);
        }
        for (&p, d) in acting.iter().zip(&decisions) {
            self.chi.sigma[p.index()] = d.dwell;
            self.chi.theta[p.index()] = d.param.clone();
            self.committed[p.index()] = d.dwell;
        }
        let simultaneous = acting.len() == 2;
        let gamma = self.spec.discount;
        for (&p, d) in acting.iter().zip(decisions) {
            let g = self.spec.player(p).trigger_cost.eval(d.dwell);
            let disc = (-gamma * self.t).exp()
                * self.spec.trigger_cost_timing.factor(gamma, d.dwell)
                * g;
            self.traj.discounted_trigger_cost[p.index()] += disc;
            self.traj.events.push(TriggerEvent {
                t: self.t,
                player: p,
                simultaneous,
                dwell: d.dwell,
                param: d.param,
                cost: g,
                discounted_cost: disc,
                pre_state: pre.clone(),
                post_state: self.chi.clone(),
            });
        }
        let chi = self.chi.clone();
        self.traj.push_sample(self.t, &chi);
        Ok(())
    }

    fn sanitize(&self, p: Player, mut d: Decision) -> Result<Decision> {
        let ps = self.spec.player(p);
        if !d.dwell.is_finite() || d.param.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "{p} returned a non-finite decision {d:?} at t = {}",
                self.t
            )));
        }
        if d.param.len() != ps.param_dim() {
            return Err(Error::Structural(format!(
                "{p} returned {} parameters, expected {}",
                d.param.len(),
                ps.param_dim()
            )));
        }
        if !ps.dwell_bounds.contains(d.dwell, 0.0) {
            warn!("{p} chose dwell {} outside its bounds; clamped", d.dwell);
            d.dwell = ps.dwell_bounds.clamp(d.dwell);
        }
        if !ps.param_box.contains(&d.param, 1e-12) {
            warn!("{p} chose parameters {:?} outside its box; clamped", d.param);
        }
        ps.param_box.clamp(&mut d.param);
        Ok(d)
    }

    fn elapsed(&self) -> [f64; 2] {
        [self.committed[0] - self.chi.sigma[0], self.committed[1] - self.chi.sigma[1]]
    }

    fn flow(&mut self, dt: f64) {
        let elapsed = self.elapsed();
        let mut cost = [0.0; 2];
        let t0 = self.t;
        let theta = self.chi.theta.clone();
        let clamps = if self.dense {
            let mut pts: Vec<(f64, Vec<f64>)> = Vec::new();
            let mut obs = |s: f64, x: &[f64]| pts.push((s, x.to_vec()));
            let c = integrate(
                self.spec,
                &mut self.chi.x,
                [&theta[0], &theta[1]],
                elapsed,
                dt,
                self.h,
                &mut cost,
                Some(&mut obs),
            );
            let base = self.chi.clone();
            for (s, x) in pts {
                let mut st = base.clone();
                st.x = x;
                st.sigma = [base.sigma[0] - s, base.sigma[1] - s];
                self.traj.push_sample(t0 + s, &st);
            }
            c
        } else {
            integrate(
                self.spec,
                &mut self.chi.x,
                [&theta[0], &theta[1]],
                elapsed,
                dt,
                self.h,
                &mut cost,
                None,
            )
        };
        let w = (-self.spec.discount * t0).exp();
        self.traj.discounted_running_cost[0] += w * cost[0];
        self.traj.discounted_running_cost[1] += w * cost[1];
        self.traj.clamp_count += clamps;
        decrement_clocks(&mut self.chi, dt);
        self.t = t0 + dt;
        let chi = self.chi.clone();
        self.traj.push_sample(self.t, &chi);
    }

    fn advance(&mut self, horizon: f64) -> Result<()> {
        if !self.spec.has_jumps() {
            self.flow(horizon);
            return Ok(());
        }
        let exp = Exp::new(self.spec.jump_rate_bound).map_err(|e| Error::Numerical(e.to_string()))?;
        let mut done = 0.0;
        loop {
            let cand = match self.pending.take() {
                Some(c) => c,
                None => exp.sample(&mut self.rng),
            };
            if done + cand >= horizon {
                self.pending = Some(cand - (horizon - done));
                self.flow(horizon - done);
                return Ok(());
            }
            self.flow(cand);
            done += cand;
            let elapsed = self.elapsed();
            let mut u = [Action::new(), Action::new()];
            actions(self.spec, [&self.chi.theta[0], &self.chi.theta[1]], elapsed, &mut u);
            if thin_accept(self.spec, &self.chi.x, &u, &mut self.rng)? {
                let pre = self.chi.clone();
                let mut post = vec![0.0; pre.x.len()];
                self.spec.jump_kernel.sample(
                    &self.spec.state_box,
                    &pre.x,
                    &u[0],
                    &u[1],
                    &mut self.rng,
                    &mut post,
                );
                self.chi.x = post;
                let chi = self.chi.clone();
                self.traj.push_sample(self.t, &chi);
                self.traj.jumps.push(JumpRecord { t: self.t, pre_state: pre, post_state: chi });
                return Ok(());
            }
        }
    }
}

/// Simulates until `opts.t_max` under the two policies.
pub fn rollout(
    spec: &GameSpec,
    chi0: &AugmentedState,
    policies: [&dyn Policy; 2],
    opts: &RolloutOptions,
) -> Result<Trajectory> {
    let mut sim = Simulator::new(spec, chi0.clone(), policies, opts.seed)?.dense(opts.dense);
    sim.run_until(opts.t_max)?;
    Ok(sim.into_trajectory())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::*;

    #[test]
    fn zero_velocity_is_a_fixed_point() {
        let spec = fixtures::double_integrator(2);
        // positions (1, 1), velocities zero
        let chi = AugmentedState::new(vec![1.0, 1.0, 0.0, 0.0], 0.7, vec![0.0, 0.0], 0.9, vec![0.0, 0.0]);
        let out = flow_step(&spec, &chi, [0.7, 0.9], 0.5).unwrap();
        assert_eq!(out.x, chi.x);
        assert!((out.sigma[0] - 0.2).abs() < 1e-15);
        assert!((out.sigma[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unit_velocity_advances_position_exactly() {
        let spec = fixtures::double_integrator(2);
        let chi = AugmentedState::new(vec![0.0, 0.0, 1.0, 0.0], 0.5, vec![0.0, 0.0], 0.5, vec![0.0, 0.0]);
        let out = flow_step(&spec, &chi, [0.5, 0.5], 0.25).unwrap();
        assert!((out.x[0] - 0.25).abs() < 1e-14);
        assert_eq!(out.x[2], 1.0);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let mut spec = fixtures::scalar_zero();
        spec.drift = Drift::Linear { a: vec![vec![-1.0]], b1: vec![vec![0.0]], b2: vec![vec![0.0]] };
        let chi = AugmentedState::new(vec![1.0], 0.5, vec![0.0], 0.5, vec![0.0]);
        let out = flow_step(&spec, &chi, [0.5, 0.5], 0.1).unwrap();
        assert!((out.x[0] - (-0.1f64).exp()).abs() < 1e-8);
        assert!((out.x[0] - 0.904837).abs() < 1e-6);
    }

    #[test]
    fn flow_step_beyond_boundary_is_rejected() {
        let spec = fixtures::scalar_zero();
        let chi = AugmentedState::new(vec![0.0], 0.2, vec![0.0], 0.5, vec![0.0]);
        assert!(matches!(flow_step(&spec, &chi, [0.2, 0.5], 0.3), Err(Error::Precondition(_))));
    }

    #[test]
    fn no_jumps_without_intensity() {
        let spec = fixtures::scalar_zero();
        let chi = AugmentedState::new(vec![0.0], 1.0, vec![0.0], 1.0, vec![0.0]);
        for seed in 0..20 {
            assert!(sample_jump_time(&spec, &chi, [1.0, 1.0], 1.0, seed).unwrap().is_none());
        }
    }

    #[test]
    fn thinning_rejects_where_intensity_vanishes() {
        let mut spec = fixtures::scalar_zero();
        spec.jump_intensity = JumpIntensity::Threshold { dim: 0, threshold: 0.0, rate: 2.0 };
        spec.jump_rate_bound = 2.0;
        let chi = AugmentedState::new(vec![-0.5], 1.0, vec![0.0], 1.0, vec![0.0]);
        for seed in 0..50 {
            assert!(sample_jump_time(&spec, &chi, [1.0, 1.0], 1.0, seed).unwrap().is_none());
        }
    }

    #[test]
    fn intensity_above_bound_is_a_hard_error() {
        let mut spec = fixtures::scalar_zero();
        spec.jump_intensity = JumpIntensity::Constant { rate: 3.0 };
        spec.jump_rate_bound = 2.0;
        let chi = AugmentedState::new(vec![0.0], 1.0, vec![0.0], 1.0, vec![0.0]);
        let r = (0..10).map(|s| sample_jump_time(&spec, &chi, [1.0, 1.0], 1.0, s)).find(|r| r.is_err());
        assert!(matches!(r, Some(Err(Error::Numerical(_)))));
    }

    #[test]
    fn event_calendar_with_two_consecutive_leader_moves() {
        let spec = fixtures::scalar_zero();
        let chi = AugmentedState::new(vec![0.0], 0.3, vec![0.0], 0.5, vec![0.0]);
        let p1 = ConstantPolicy(Decision::new(0.1, vec![0.0]));
        let p2 = ConstantPolicy(Decision::new(0.5, vec![0.0]));
        let traj = rollout(&spec, &chi, [&p1, &p2], &RolloutOptions::new(0.55, 0)).unwrap();
        let ev = &traj.events;
        assert!((ev[0].t - 0.3).abs() < 1e-12 && ev[0].player == Player::One);
        assert!((ev[1].t - 0.4).abs() < 1e-12 && ev[1].player == Player::One);
        let at_half: Vec<_> = ev.iter().filter(|e| (e.t - 0.5).abs() < 1e-12).collect();
        assert!(at_half.iter().any(|e| e.player == Player::Two));
        assert!(!ev[0].simultaneous && !ev[1].simultaneous);
    }

    #[test]
    fn simultaneous_expiry_shows_both_players_the_same_state() {
        let spec = fixtures::scalar_zero();
        let chi = AugmentedState::new(vec![0.0], 0.0, vec![0.0], 0.0, vec![0.0]);
        let p1 = ConstantPolicy(Decision::new(0.2, vec![0.5]));
        let p2 = FnPolicy(|c: &AugmentedState| {
            // the leader's fresh parameter must not be visible
            assert_eq!(c.theta[0], vec![0.0]);
            Ok(Decision::new(0.3, vec![0.0]))
        });
        let traj = rollout(&spec, &chi, [&p1, &p2], &RolloutOptions::new(0.1, 0)).unwrap();
        assert_eq!(traj.events.len(), 2);
        assert!(traj.events.iter().all(|e| e.simultaneous));
        assert_eq!(traj.events[0].pre_state, traj.events[1].pre_state);
    }

    #[test]
    fn nan_decision_is_an_error_and_out_of_range_dwell_is_clamped() {
        let spec = fixtures::scalar_zero();
        let chi = AugmentedState::new(vec![0.0], 0.0, vec![0.0], 0.5, vec![0.0]);
        let bad = ConstantPolicy(Decision::new(f64::NAN, vec![0.0]));
        let ok = ConstantPolicy(Decision::new(0.5, vec![0.0]));
        let r = rollout(&spec, &chi, [&bad, &ok], &RolloutOptions::new(1.0, 0));
        assert!(matches!(r, Err(Error::Numerical(_))));
        let long = ConstantPolicy(Decision::new(5.0, vec![0.0]));
        let traj = rollout(&spec, &chi, [&long, &ok], &RolloutOptions::new(0.1, 0)).unwrap();
        assert_eq!(traj.events[0].dwell, spec.players[0].dwell_bounds.max);
    }

    #[test]
    fn constant_cost_discount_identity() {
        let mut spec = fixtures::scalar_zero();
        let c = 2.0;
        spec.players[0].running_cost = RunningCost::Constant { value: c };
        spec.players[0].trigger_cost = TriggerCost::Constant { value: 0.0 };
        let chi = AugmentedState::new(vec![0.0], 0.0, vec![0.0], 0.0, vec![0.0]);
        let p = ConstantPolicy(Decision::new(0.5, vec![0.0]));
        let t_max = 50.0 / spec.discount;
        let traj = rollout(&spec, &chi, [&p, &p], &RolloutOptions::new(t_max, 0)).unwrap();
        let exact = c / spec.discount;
        assert!((traj.discounted_running_cost[0] - exact).abs() < (-50f64).exp() * exact + 1e-9);
    }

    #[test]
    fn trigger_cost_geometric_series() {
        let mut spec = fixtures::scalar_zero();
        let kappa = 0.3;
        let dwell = 0.4;
        spec.players[0].trigger_cost = TriggerCost::Constant { value: kappa };
        let chi = AugmentedState::new(vec![0.0], 0.0, vec![0.0], 1.0, vec![0.0]);
        let p = ConstantPolicy(Decision::new(dwell, vec![0.0]));
        let t_max = 60.0 / spec.discount;
        let traj = rollout(&spec, &chi, [&p, &p], &RolloutOptions::new(t_max, 0)).unwrap();
        let exact = kappa / (1.0 - (-spec.discount * dwell).exp());
        assert!((traj.discounted_trigger_cost[0] - exact).abs() < 1e-9);
        spec.trigger_cost_timing = TriggerCostTiming::AtExpiry;
        let traj = rollout(&spec, &chi, [&p, &p], &RolloutOptions::new(t_max, 0)).unwrap();
        let shifted = exact * (-spec.discount * dwell).exp();
        assert!((traj.discounted_trigger_cost[0] - shifted).abs() < 1e-9);
    }

    #[test]
    fn csv_and_event_log_export() {
        let spec = fixtures::scalar_zero();
        let chi = AugmentedState::new(vec![0.0], 0.0, vec![0.0], 0.0, vec![0.0]);
        let p = ConstantPolicy(Decision::new(0.5, vec![0.25]));
        let traj = rollout(&spec, &chi, [&p, &p], &RolloutOptions::new(1.0, 0)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0,sigma1,sigma2,theta1_0,theta2_0\n"));
        let mut buf = Vec::new();
        traj.write_events_json(&mut buf).unwrap();
        let back: Vec<TriggerEvent> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, traj.events);
    }
}
