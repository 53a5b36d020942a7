//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clockgame::follower::{rollout_consistency, solve_with, MinMode, OperatorOptions, StackelbergOperator};
use clockgame::grid::{sup_norm_diff, GridConfig, GridSpec, ValueGrid};
use clockgame::leader::{
    fd_hypergradient, hypergradient, neumann_solve, optimize_leader, Feature, GradMethod, LeaderParams, LeaderPolicy,
    ObjectiveConfig, OptimizeOptions, PolicyHead, SmoothingConfig, StepSchedule,
};
use clockgame::lq::{self, LQPursuitConfig, ScalarPursuitConfig};
use clockgame::model::*;
use clockgame::nash::{self, pure_equilibria, static_game_solve, Classification, Resolution};
use clockgame::sim::{ConstantPolicy, Decision, FnPolicy, RolloutOptions};
use clockgame::{stats, AugmentedState, GameSpec, Player};

/// Criteria whose documented outcome is a failure; they print FAIL without
/// failing the suite. Anything else that fails panics.
const KNOWN_FAILURES: &[u32] = &[8];

fn report(n: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {tag}  {detail}");
    if !pass && !KNOWN_FAILURES.contains(&n) {
        panic!("criterion {n} failed: {detail}");
    }
}

fn desk_spec() -> GameSpec {
    lq::build_game(&LQPursuitConfig::desk()).unwrap()
}

fn desk_grid(spec: &GameSpec) -> Arc<GridSpec> {
    let cfg = GridConfig::uniform(spec, &[5, 5, 3, 3], 0.1, 3);
    Arc::new(GridSpec::new(spec, &cfg).unwrap())
}

/// The pursuer's head: dwell from (bias, evader clock, distance), gain from
/// (bias, evader clock) on the Riccati feedback -K1 z.
fn desk_head(spec: &GameSpec) -> Arc<PolicyHead> {
    let sol = lq::riccati_baseline(&LQPursuitConfig::desk()).unwrap();
    let map = sol.k[0].iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    Arc::new(
        PolicyHead::new(
            spec,
            Player::One,
            vec![Feature::Bias, Feature::OppClock, Feature::Norm { dims: vec![0, 1] }],
            vec![Feature::Bias, Feature::OppClock],
            map,
        )
        .unwrap(),
    )
}

fn desk_leader(spec: &GameSpec) -> LeaderPolicy {
    LeaderPolicy::new(desk_head(spec), vec![0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
}

fn random_grid(grid: &Arc<GridSpec>, rng: &mut ChaCha8Rng) -> ValueGrid {
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let values = (0..grid.len()).map(|_| rng.random_range(-scale..scale)).collect();
    ValueGrid::from_values(grid.clone(), values).unwrap()
}

#[test]
fn criterion_1_two_step_contraction() {
    let start = Instant::now();
    let spec = desk_spec();
    let grid = desk_grid(&spec);
    let leader = desk_leader(&spec);
    let op = StackelbergOperator::new(&spec, grid.clone(), &leader, &OperatorOptions::default()).unwrap();
    let beta = op.beta();
    assert!((beta - (-0.05f64).exp()).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let pairs = 100;
    for _ in 0..pairs {
        let u = random_grid(&grid, &mut rng);
        let v = random_grid(&grid, &mut rng);
        let su = op.apply(&op.apply(&u, MinMode::Hard).unwrap(), MinMode::Hard).unwrap();
        let sv = op.apply(&op.apply(&v, MinMode::Hard).unwrap(), MinMode::Hard).unwrap();
        let lhs = sup_norm_diff(&su, &sv).unwrap();
        let rhs = beta * sup_norm_diff(&u, &v).unwrap();
        worst = worst.max(lhs - rhs);
        if lhs > rhs + 1e-10 {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        violations == 0 && secs < 300.0,
        &format!(
            "{pairs} pairs on {} nodes, beta {beta:.6}, max excess {worst:.3e}, {violations} violations, {secs:.0} s",
            grid.len()
        ),
    );
}

#[test]
fn criterion_2_geometric_convergence() {
    let spec = desk_spec();
    let grid = desk_grid(&spec);
    let leader = desk_leader(&spec);
    let op = StackelbergOperator::new(&spec, grid, &leader, &OperatorOptions::default()).unwrap();
    let beta = op.beta();
    let (_, rep) = op.solve(None, 1e-6, 10_000, MinMode::Hard).unwrap();
    let bound = rep.sweep_bound().unwrap();
    // first index after which every two-sweep ratio stays below beta + 0.01
    let settle = rep.two_sweep_ratios.iter().rposition(|r| *r > beta + 0.01).map_or(0, |i| i + 1);
    let tail_max = rep.two_sweep_ratios[settle..].iter().copied().fold(0.0, f64::max);
    let pass = rep.converged && rep.iterations <= bound && settle <= rep.two_sweep_ratios.len() / 2;
    report(
        2,
        pass,
        &format!(
            "{} sweeps (bound {bound}), ratios settle below {:.4} after pair {settle} of {}, tail max {tail_max:.4}",
            rep.iterations,
            beta + 0.01,
            rep.two_sweep_ratios.len()
        ),
    );
}

#[test]
fn criterion_3_discount_identities() {
    let gamma = 0.5;
    let c = 0.7;
    let kappa = 0.05;
    // constant running cost on a coarse desk grid
    let mut spec = desk_spec();
    spec.discount = gamma;
    for p in &mut spec.players {
        p.running_cost = RunningCost::Constant { value: c };
        p.running_cost_bound = c;
        p.trigger_cost = TriggerCost::Constant { value: 0.0 };
    }
    let cfg = GridConfig::uniform(&spec, &[3, 3, 3, 3], 0.1, 3);
    let grid = Arc::new(GridSpec::new(&spec, &cfg).unwrap());
    let leader = desk_leader(&spec);
    let op = StackelbergOperator::new(&spec, grid.clone(), &leader, &OperatorOptions::default()).unwrap();
    let (v, _) = op.solve(None, 1e-10, 100_000, MinMode::Hard).unwrap();
    let err_c = v.values.iter().map(|x| (x - c / gamma).abs()).fold(0.0, f64::max);

    // trigger cost only: the follower waits the longest dwell
    for p in &mut spec.players {
        p.running_cost = RunningCost::Zero;
        p.running_cost_bound = 0.0;
        p.trigger_cost = TriggerCost::Constant { value: kappa };
    }
    let t_max = spec.players[1].dwell_bounds.max;
    let op = StackelbergOperator::new(&spec, grid.clone(), &leader, &OperatorOptions::default()).unwrap();
    let (v, _) = op.solve(None, 1e-12, 100_000, MinMode::Hard).unwrap();
    let series = kappa / (1.0 - (-gamma * t_max).exp());
    let sa = grid.sigma_axis(Player::Two);
    let err_k = (0..grid.len())
        .map(|i| {
            let s2 = grid.axes()[sa].node(grid.coord(i, sa));
            (v.values[i] - (-gamma * s2).exp() * series).abs()
        })
        .fold(0.0, f64::max);

    // the same series along a simulated path with a fixed dwell
    let dwell = 0.2;
    let chi0 = AugmentedState::new(vec![0.0; 4], 0.0, vec![0.0; 2], 0.0, vec![0.0; 2]);
    let pol = ConstantPolicy(Decision::new(dwell, vec![0.0; 2]));
    let horizon = 50.0 / gamma;
    let traj = clockgame::rollout(&spec, &chi0, [&pol, &pol], &RolloutOptions::new(horizon, 3)).unwrap();
    let sim_series = kappa / (1.0 - (-gamma * dwell).exp());
    let truncation = sim_series * (-gamma * horizon).exp();
    let err_sim = (traj.total_cost(Player::One) - sim_series).abs();

    let pass = err_c < 1e-6 && err_k < 1e-6 && err_sim <= truncation + 1e-9;
    report(
        3,
        pass,
        &format!(
            "max |V - c/gamma| {err_c:.2e}, max |V - kappa e^(-gamma s)/(1-e^(-gamma T))| {err_k:.2e}, rollout series error {err_sim:.2e} (truncation {truncation:.1e})"
        ),
    );
}

fn desk_objective() -> ObjectiveConfig {
    let z = |x: [f64; 4], s2: f64| AugmentedState::new(x.to_vec(), 0.0, vec![0.0; 2], s2, vec![0.0; 2]);
    ObjectiveConfig {
        chi0: vec![z([1.0, 0.5, 0.0, 0.0], 0.0), z([-0.5, 1.0, 0.0, 0.0], 0.2), z([0.75, -0.75, 0.0, 0.0], 0.1)],
        n_rollouts: 1,
        t_max: 40.0,
        seed: 0,
    }
}

#[test]
fn criterion_5_hypergradient() {
    let start = Instant::now();
    let spec = desk_spec();
    let grid = desk_grid(&spec);
    let leader = LeaderPolicy::new(desk_head(&spec), vec![0.3, -1.0, 0.5, 1.0, 0.2]).unwrap();
    let op = StackelbergOperator::new(&spec, grid, &leader, &OperatorOptions::default()).unwrap();
    let (omega, _) = op.solve(None, 1e-9, 100_000, MinMode::Hard).unwrap();
    let smoothing = SmoothingConfig::default();
    let objective = desk_objective();
    let hg = hypergradient(&spec, &op, &leader, &omega, &smoothing, &objective).unwrap();
    let fd = fd_hypergradient(&spec, &op, &leader, &hg.omega, hg.mode, 1e-3, &smoothing, &objective).unwrap();
    let rel: Vec<f64> = hg.grad.iter().zip(&fd).map(|(g, f)| (g - f).abs() / f.abs().max(1e-12)).collect();
    let worst = rel.iter().copied().fold(0.0, f64::max);
    let desk_secs = start.elapsed().as_secs_f64();

    // linear toy: w = A w + B xi, J = c'w, with A a damped cyclic shift
    let n = 6;
    let d = 3;
    let a = |i: usize, j: usize| if j == (i + 1) % n { 0.9 } else if j == i { 0.05 } else { 0.0 };
    let b = |i: usize, k: usize| ((i * d + k) as f64 * 0.37).sin();
    let c: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
    // implicit: y = (I - A')^{-1} c by Neumann, grad_k = sum_i y_i B_ik
    let (y, _) = neumann_solve(
        |t, out| {
            for j in 0..n {
                out[j] = (0..n).map(|i| a(i, j) * t[i]).sum();
            }
        },
        &c,
        0.95,
        1e-15,
    )
    .unwrap();
    let implicit: Vec<f64> = (0..d).map(|k| (0..n).map(|i| y[i] * b(i, k)).sum()).collect();
    // finite differences of the exact solve, which is linear in xi
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - a(i, j));
    let lu = m.lu();
    let objective_at = |xi: &[f64]| -> f64 {
        let rhs = nalgebra::DVector::from_fn(n, |i, _| (0..d).map(|k| b(i, k) * xi[k]).sum());
        let w = lu.solve(&rhs).unwrap();
        c.iter().zip(w.iter()).map(|(p, q)| p * q).sum()
    };
    let xi0 = [0.2, -0.4, 0.7];
    let toy_err = (0..d)
        .map(|k| {
            let (mut p, mut q) = (xi0, xi0);
            p[k] += 1e-3;
            q[k] -= 1e-3;
            ((objective_at(&p) - objective_at(&q)) / 2e-3 - implicit[k]).abs()
        })
        .fold(0.0, f64::max);

    let pass = worst < 1e-2 && toy_err < 1e-10 && desk_secs < 600.0;
    let pairs: Vec<String> = hg.grad.iter().zip(&fd).map(|(g, f)| format!("{g:.5}/{f:.5}")).collect();
    report(
        5,
        pass,
        &format!(
            "desk {:?} mode, {} ambiguous nodes, implicit/fd [{}], max relative error {worst:.2e}, {desk_secs:.0} s; linear toy error {toy_err:.1e}",
            hg.mode,
            hg.ambiguous_nodes,
            pairs.join(", ")
        ),
    );
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_4_bellman_rollout_consistency() {
    let spec = lq::build_scalar_game(&ScalarPursuitConfig::desk()).unwrap();
    let head = PolicyHead::new(
        &spec,
        Player::One,
        vec![Feature::Bias, Feature::OppClock],
        vec![Feature::Bias],
        vec![vec![-1.0]],
    )
    .unwrap();
    let leader = LeaderPolicy::new(Arc::new(head), vec![0.0, 0.0, 1.0]).unwrap();
    // the clock axes keep spacing 0.2 under refinement, so clocks start on nodes
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let chi0s: Vec<AugmentedState> = (0..20)
        .map(|_| {
            AugmentedState::new(
                vec![rng.random_range(-0.8..0.8)],
                0.2 * rng.random_range(0..4) as f64,
                vec![rng.random_range(-1.0..1.0)],
                0.2 * rng.random_range(0..4) as f64,
                vec![rng.random_range(-0.5..0.5)],
            )
        })
        .collect();
    // (state nodes, parameter nodes), each level halving both spacings
    let levels = [(17, 5), (33, 9), (65, 17)];
    let runs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = levels
        .iter()
        .map(|&(n, t)| {
            let cfg = GridConfig::uniform(&spec, &[n], 0.2, t);
            let grid = Arc::new(GridSpec::new(&spec, &cfg).unwrap());
            let op = StackelbergOperator::new(&spec, grid, &leader, &OperatorOptions::default()).unwrap();
            let sol = solve_with(op, None, 1e-9, 100_000).unwrap();
            assert!(sol.report.converged);
            let rows = rollout_consistency(&spec, &leader, &sol, &chi0s, 4, 40.0, 11).unwrap();
            (
                rows.iter().map(|r| r.value).collect(),
                rows.iter().map(|r| r.mc_mean).collect(),
                rows.iter().map(|r| r.mc_std_err).collect(),
            )
        })
        .collect();
    // first-order Richardson estimate from the next refinement, for both the
    // grid value and the rollout cost of the extracted policy
    let bounds: Vec<f64> = (0..2)
        .map(|l| 2.0 * (max_abs_diff(&runs[l].0, &runs[l + 1].0) + max_abs_diff(&runs[l].1, &runs[l + 1].1)))
        .collect();
    let mut worst = [0.0f64; 2];
    let mut ok = true;
    for l in 0..2 {
        let (v, mc, se) = &runs[l];
        for k in 0..chi0s.len() {
            let gap = (v[k] - mc[k]).abs();
            worst[l] = worst[l].max(gap);
            ok &= gap <= 3.0 * se[k] + bounds[l];
        }
    }
    let shrinks = bounds[1] < bounds[0];
    report(
        4,
        ok && shrinks,
        &format!(
            "20 states; max |V - MC| {:.4} within bound {:.4} at {:?}, {:.4} within {:.4} at {:?}; bound shrinks: {shrinks}",
            worst[0], bounds[0], levels[0], worst[1], bounds[1], levels[1]
        ),
    );
}

#[test]
fn criterion_6_riccati_baseline() {
    let cfg = LQPursuitConfig::desk();
    let sol = lq::riccati_baseline(&cfg).unwrap();
    let res = sol.residuals.iter().copied().fold(0.0, f64::max);
    let game = cfg.linear_quadratic();
    let mut rel = 0.0f64;
    for z0 in [cfg.z0.clone(), vec![-0.5, 1.0, 0.3, -0.2]] {
        let run = lq::continuous_rollout(&game, &sol, &z0, 60.0, 1e-3, None, 1000).unwrap();
        for p in [Player::One, Player::Two] {
            let v = sol.value(p, &z0);
            rel = rel.max((run.discounted_cost[p.index()] - v).abs() / v.abs());
        }
    }
    let scalar = lq::LinearQuadraticGame {
        a: vec![vec![0.0]],
        b: [vec![vec![1.0]], vec![vec![]]],
        q: [vec![vec![1.0]], vec![vec![0.0]]],
        r: [vec![vec![1.0]], vec![]],
        r_other: [vec![], vec![]],
        discount: 0.0,
    };
    let s = lq::coupled_riccati(&scalar).unwrap();
    let p_err = (s.p[0][0][0] - 1.0).abs().max((s.k[0][0][0] - 1.0).abs());
    let pass = res < 1e-8 && sol.hurwitz && rel < 1e-4 && p_err < 1e-12;
    report(
        6,
        pass,
        &format!(
            "ARE residual {res:.2e}, Hurwitz {}, rollout vs z'Pz relative {rel:.2e}, scalar |P - 1| {p_err:.1e}",
            sol.hurwitz
        ),
    );
}

/// Holds the clamped Riccati feedback -K z for a fixed dwell.
fn sample_and_hold(
    sol: &lq::RiccatiSolution,
    p: Player,
    dwell: f64,
    accel: f64,
) -> impl clockgame::Policy + '_ {
    FnPolicy(move |chi: &AugmentedState| {
        let u = sol.control(p, &chi.x).iter().map(|v| v.clamp(-accel, accel)).collect();
        Ok(Decision::new(dwell, u))
    })
}

#[test]
fn criterion_7_continuous_limit() {
    let mut cfg = LQPursuitConfig::desk();
    cfg.kappa = [0.0, 0.0];
    let sol = lq::riccati_baseline(&cfg).unwrap();
    let t_max = 40.0;
    let mut rows = Vec::new();
    for t_bar in [0.4, 0.2, 0.1, 0.05] {
        cfg.dwell = [DwellBounds::new(t_bar, t_bar); 2];
        let pursuer = sample_and_hold(&sol, Player::One, t_bar, cfg.accel[0]);
        let evader = sample_and_hold(&sol, Player::Two, t_bar, cfg.accel[1]);
        let rep = lq::run_comparison(&cfg, &sol, &pursuer, &evader, t_max, 5).unwrap();
        let base = rep.baseline_cost[0];
        rows.push((t_bar, rep.triggered_cost[0], base, (rep.triggered_cost[0] - base).abs() / base.abs()));
    }
    let monotone = rows.windows(2).all(|w| w[1].3 < w[0].3);
    let last = rows.last().unwrap().3;
    let table: Vec<String> =
        rows.iter().map(|(t, c, _, r)| format!("T {t}: {c:.5} ({:.2}%)", 100.0 * r)).collect();
    report(
        7,
        monotone && last < 0.10,
        &format!("baseline {:.5}; {}; monotone: {monotone}", rows[0].2, table.join(", ")),
    );
}

#[test]
fn criterion_8_sensitivity_trends() {
    let start = Instant::now();
    let spec = desk_spec();
    let grid = desk_grid(&spec);
    let head = desk_head(&spec);
    let opts = OptimizeOptions {
        schedule: StepSchedule::Constant { alpha: 0.3 },
        outer_iters: 6,
        inner_tol: 1e-8,
        inner_max_iters: 100_000,
        grad: GradMethod::Implicit,
        grad_tol: 1e-6,
        smoothing: SmoothingConfig::default(),
        temperature_decay: 1.0,
        min_temperature: 1e-3,
        objective: desk_objective(),
        operator: OperatorOptions::default(),
    };
    let xi0 = LeaderParams { xi: vec![0.0, 0.0, 0.0, 1.0, 0.0] };
    let res = optimize_leader(&spec, grid, head.clone(), xi0, &opts).unwrap();
    let leader = LeaderPolicy::new(head, res.params.xi.clone()).unwrap();
    let base = AugmentedState::new(vec![0.0; 4], 0.0, vec![0.0; 2], 0.0, vec![0.0; 2]);
    let sigma_opp = [0.0, 0.1, 0.2, 0.3];
    let distances = [0.25, 0.5, 0.75, 1.0, 1.25];
    let rows =
        lq::policy_sensitivity_sweep(&leader, Player::One, &base, 2, &[2.0, 1.0], &sigma_opp, &distances).unwrap();
    let col = |f: fn(&lq::SensitivityRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (s, d, dwell, ctrl) = (col(|r| r.sigma_opp), col(|r| r.distance), col(|r| r.dwell), col(|r| r.control_norm));
    let dw_s = stats::spearman(&dwell, &s).unwrap();
    let dw_d = stats::spearman(&dwell, &d).unwrap();
    let u_s = stats::spearman(&ctrl, &s).unwrap();
    let ok = |c: &stats::Correlation, sign: f64| c.rho * sign > 0.0 && c.p_value < 0.05;
    let pass = ok(&dw_s, -1.0) && ok(&dw_d, -1.0) && ok(&u_s, 1.0);
    let objectives: Vec<String> = res.history.iter().map(|h| format!("{:.4}", h.objective)).collect();
    let smoothed: Vec<String> =
        res.history.iter().filter(|h| h.smoothed_objective.is_finite()).map(|h| format!("{:.4}", h.smoothed_objective)).collect();
    report(
        8,
        pass,
        &format!(
            "xi {:?}, rollout objective [{}], smoothed grid objective [{}]; dwell~sigma rho {:+.3} (p {:.1e}), dwell~distance rho {:+.3} (p {:.1e}), control~sigma rho {:+.3} (p {:.1e}); {:.0} s",
            res.params.xi.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            objectives.join(", "),
            smoothed.join(", "),
            dw_s.rho,
            dw_s.p_value,
            dw_d.rho,
            dw_d.p_value,
            u_s.rho,
            u_s.p_value,
            start.elapsed().as_secs_f64()
        ),
    );
}

/// Each player steers its own coordinate and pays only for it.
fn decoupled_game() -> GameSpec {
    let player = |i: usize| {
        let mut q = vec![vec![0.0; 2]; 2];
        q[i][i] = 1.0;
        PlayerSpec {
            dwell_bounds: DwellBounds::new(0.1, 0.3),
            param_box: BoxBounds::symmetric(1, 1.0),
            control_law: ControlLaw::Constant,
            running_cost: RunningCost::Quadratic {
                q,
                r1: vec![vec![if i == 0 { 0.5 } else { 0.0 }]],
                r2: vec![vec![if i == 1 { 0.5 } else { 0.0 }]],
                offset: 0.0,
            },
            running_cost_bound: 1.5,
            trigger_cost: TriggerCost::Constant { value: 0.05 },
        }
    };
    GameSpec {
        state_box: BoxBounds::symmetric(2, 1.0),
        drift: Drift::Linear {
            a: vec![vec![0.0; 2]; 2],
            b1: vec![vec![1.0], vec![0.0]],
            b2: vec![vec![0.0], vec![1.0]],
        },
        jump_intensity: JumpIntensity::Zero,
        jump_rate_bound: 0.0,
        jump_kernel: JumpKernel::Identity,
        discount: 0.5,
        players: [player(0), player(1)],
        trigger_cost_timing: TriggerCostTiming::AtDecision,
    }
}

fn no_profitable_deviation(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize) -> bool {
    (0..a.len()).all(|k| a[k][j] >= a[i][j]) && (0..a[0].len()).all(|k| b[i][k] >= b[i][j])
}

#[test]
fn criterion_9_nash_sanity() {
    let spec = decoupled_game();
    // speeds are parameter nodes and clocks move in steps of 0.1, so a state
    // spacing of 0.1 puts every flow endpoint on a node
    let cfg = GridConfig::uniform(&spec, &[21, 21], 0.1, 3);
    let grid = Arc::new(GridSpec::new(&spec, &cfg).unwrap());
    let tol = 1e-6;
    let res = nash::nash_iterate(&spec, grid.clone(), 0.5, 1e-10, 20_000).unwrap();
    let any = ConstantPolicy(Decision::new(0.2, vec![0.5]));
    let opts = OperatorOptions::default();
    let single = |f: Player| {
        let op = StackelbergOperator::with_follower(&spec, grid.clone(), f, &any, &opts).unwrap();
        op.solve(None, 1e-11, 100_000, MinMode::Hard).unwrap().0
    };
    let gaps = [Player::One, Player::Two].map(|p| sup_norm_diff(&res.values[p.index()], &single(p)).unwrap());
    let converged = res.report.classification == Classification::Converged;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut with_ne, mut checked_ok, mut without_ok) = (0, 0, 0);
    let games = 100;
    for _ in 0..games {
        let (m, n) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut draw = || -> Vec<Vec<f64>> {
            (0..m).map(|_| (0..n).map(|_| rng.random_range(-3i32..=3) as f64).collect()).collect()
        };
        let (a, b) = (draw(), draw());
        let sol = static_game_solve(&a, &b).unwrap();
        let exhaustive: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| no_profitable_deviation(&a, &b, i, j))
            .collect();
        assert_eq!(exhaustive, pure_equilibria(&a, &b));
        if exhaustive.is_empty() {
            if !matches!(sol.resolution, Resolution::PureNash { .. }) {
                without_ok += 1;
            }
        } else {
            with_ne += 1;
            if no_profitable_deviation(&a, &b, sol.row, sol.col) && sol.values == (a[sol.row][sol.col], b[sol.row][sol.col]) {
                checked_ok += 1;
            }
        }
    }
    let pass = converged && gaps[0] < tol && gaps[1] < tol && checked_ok == with_ne && checked_ok + without_ok == games;
    report(
        9,
        pass,
        &format!(
            "relaxation {:?} after {} sweeps, |V_i - single-player V_i| = {:.1e}, {:.1e}; {checked_ok}/{with_ne} bimatrix picks are equilibria, {without_ok} games without one flagged",
            res.report.classification, res.report.iterations, gaps[0], gaps[1]
        ),
    );
}
