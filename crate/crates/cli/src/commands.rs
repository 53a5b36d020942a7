use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use clockgame::follower::{
    rollout_consistency, solve_with, FixedPointReport, FollowerSolution, MinMode, StackelbergOperator, TriggerPolicy,
};
use clockgame::grid::ValueGrid;
use clockgame::leader::{
    optimize_leader as run_optimizer, write_history_csv, GradMethod, LeaderParams, LeaderPolicy, ObjectiveConfig,
    OptimizeOptions, OptimizeStatus, PolicyHead, StepSchedule,
};
use clockgame::lq::{self, write_sensitivity_csv};
use clockgame::nash::{nash_iterate_with, Classification, NashOperator};
use clockgame::rng;
use clockgame::sim::{rollout, Policy, RolloutOptions};
use clockgame::stats::spearman;
use clockgame::{GameSpec, Player};

use crate::config::{self, Config, GameConfig, SweepTarget};
use crate::{manifest, CliError, Common, GradArg};

struct Run {
    cfg: Config,
    out: PathBuf,
    seed: u64,
    tol: f64,
    max_iters: usize,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(c: &Common) -> Result<Self, CliError> {
        let mut cfg = config::load(&c.config)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        let tol = c.tol.unwrap_or(cfg.solver.tol);
        let max_iters = c.max_iters.unwrap_or(cfg.solver.max_iters);
        if !(tol > 0.0) || max_iters == 0 {
            return Err(CliError::Input("tolerance and iteration cap must be positive".into()));
        }
        std::fs::create_dir_all(&c.out)?;
        Ok(Run { seed: cfg.seed, cfg, out: c.out.clone(), tol, max_iters, files: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&p, text)?;
        self.files.push(p);
        Ok(())
    }

    fn value(&mut self, stem: &str, v: &ValueGrid) -> Result<(), CliError> {
        let p = self.path(stem);
        v.save(&p)?;
        self.files.push(self.path(&format!("{stem}.json")));
        self.files.push(self.path(&format!("{stem}.bin")));
        Ok(())
    }

    fn policy(&mut self, name: &str, p: &TriggerPolicy) -> Result<(), CliError> {
        let path = self.path(name);
        p.save(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn finish(&self, command: &str, config: &Path) -> Result<(), CliError> {
        manifest::write(&self.out, command, self.seed, config, &self.files)
    }
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!("missing artifact {}", path.display())))
    }
}

fn status(converged: bool) -> u8 {
    if converged {
        0
    } else {
        2
    }
}

pub fn solve_follower(c: &Common) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let spec = run.cfg.spec()?;
    let grid = run.cfg.grid(&spec)?;
    let leader = run.cfg.leader_policy(&spec)?;
    let op = StackelbergOperator::with_follower(
        &spec,
        grid,
        run.cfg.solver.follower,
        &*leader,
        &run.cfg.operator_options(),
    )?;
    let sol = solve_with(op, None, run.tol, run.max_iters)?;
    run.value("value", &sol.value)?;
    run.policy("follower_policy.json", &sol.policy)?;
    run.json("report.json", &sol.report)?;
    run.finish("solve-follower", &c.config)?;
    if !sol.report.converged {
        eprintln!("value iteration stopped at residual {:.3e} after {} sweeps", sol.report.final_residual, sol.report.iterations);
    }
    Ok(status(sol.report.converged))
}

#[derive(Serialize)]
struct SavedLeader<'a> {
    head: &'a PolicyHead,
    xi: &'a [f64],
}

#[derive(serde::Deserialize)]
struct LoadedLeader {
    head: PolicyHead,
    xi: Vec<f64>,
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    status: OptimizeStatus,
    xi: &'a [f64],
    follower_report: &'a FixedPointReport,
    wall_seconds: &'a [f64],
}

pub fn optimize_leader(c: &Common, grad: GradArg) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let spec = run.cfg.spec()?;
    let grid = run.cfg.grid(&spec)?;
    if run.cfg.solver.follower != Player::Two {
        return Err(CliError::Input("leader optimization runs with player 2 as the follower".into()));
    }
    let (head, xi) = run
        .cfg
        .head(&spec)?
        .ok_or_else(|| CliError::Input("optimize-leader needs a head leader".into()))?;
    let o = run.cfg.optimize.clone().ok_or_else(|| CliError::Input("config has no optimize section".into()))?;
    let opts = OptimizeOptions {
        schedule: if o.decay > 0.0 {
            StepSchedule::InverseDecay { alpha0: o.alpha, decay: o.decay }
        } else {
            StepSchedule::Constant { alpha: o.alpha }
        },
        outer_iters: o.outer_iters,
        inner_tol: run.tol,
        inner_max_iters: run.max_iters,
        grad: match grad {
            GradArg::Implicit => GradMethod::Implicit,
            GradArg::Fd => GradMethod::FiniteDifference { step: o.fd_step },
        },
        grad_tol: o.grad_tol,
        smoothing: o.smoothing.clone(),
        temperature_decay: o.temperature_decay,
        min_temperature: o.min_temperature,
        objective: ObjectiveConfig {
            chi0: o.chi0.clone(),
            n_rollouts: o.n_rollouts,
            t_max: o.t_max,
            seed: rng::substream(run.seed, "objective"),
        },
        operator: run.cfg.operator_options(),
    };
    let res = run_optimizer(&spec, grid, head.clone(), LeaderParams { xi }, &opts)?;
    let hist = run.path("history.csv");
    write_history_csv(&res.history, std::fs::File::create(&hist)?)?;
    run.files.push(hist);
    run.json("leader.json", &SavedLeader { head: &head, xi: &res.params.xi })?;
    run.value("value", &res.value)?;
    run.policy("follower_policy.json", &res.follower_policy)?;
    run.json("report.json", &res.report)?;
    // wall-clock times are kept out of the manifest
    let summary = OptimizeSummary {
        status: res.status,
        xi: &res.params.xi,
        follower_report: &res.report,
        wall_seconds: &res.wall_seconds,
    };
    std::fs::write(run.path("timing.json"), serde_json::to_string_pretty(&summary)?)?;
    run.finish("optimize-leader", &c.config)?;
    Ok(status(res.status != OptimizeStatus::InnerNotConverged))
}

pub fn nash(c: &Common, damping: Option<f64>) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let spec = run.cfg.spec()?;
    let grid = run.cfg.grid(&spec)?;
    let damping = damping.unwrap_or(run.cfg.nash.damping);
    let op = NashOperator::new(&spec, grid, &run.cfg.operator_options())?;
    let res = nash_iterate_with(&op, damping, run.tol, run.max_iters)?;
    run.value("value_1", &res.values[0])?;
    run.value("value_2", &res.values[1])?;
    run.policy("policy_1.json", &res.policies[0])?;
    run.policy("policy_2.json", &res.policies[1])?;
    run.json("nash_report.json", &res.report)?;
    run.finish("nash", &c.config)?;
    if res.report.classification != Classification::Converged {
        eprintln!("relaxation {:?} after {} steps", res.report.classification, res.report.iterations);
    }
    Ok(status(res.report.classification == Classification::Converged))
}

/// The leader saved by `optimize-leader` in the output directory, if any,
/// else the configured one.
fn leader_for(run: &Run, spec: &GameSpec) -> Result<Box<dyn Policy + Sync>, CliError> {
    let saved = run.path("leader.json");
    if saved.exists() {
        let l: LoadedLeader = serde_json::from_str(&std::fs::read_to_string(&saved)?)?;
        let head = PolicyHead::new(spec, l.head.owner, l.head.dwell_features, l.head.gain_features, l.head.param_map)?;
        return Ok(Box::new(LeaderPolicy::new(Arc::new(head), l.xi)?));
    }
    run.cfg.leader_policy(spec)
}

fn follower_for(run: &Run) -> Result<TriggerPolicy, CliError> {
    let p = run.path("follower_policy.json");
    require(&p)?;
    let policy = TriggerPolicy::load(&p)?;
    if policy.owner != run.cfg.solver.follower {
        return Err(CliError::Input(format!("{} belongs to the wrong player", p.display())));
    }
    Ok(policy)
}

#[derive(Serialize)]
struct SimulateSummary {
    n_rollouts: usize,
    t_max: f64,
    mean_cost: [f64; 2],
    trigger_counts: Vec<[usize; 2]>,
    costs: Vec<[f64; 2]>,
}

pub fn simulate(c: &Common) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let spec = run.cfg.spec()?;
    let s = run.cfg.simulate.clone().ok_or_else(|| CliError::Input("config has no simulate section".into()))?;
    let follower = follower_for(&run)?;
    let leader = leader_for(&run, &spec)?;
    let policies: [&dyn Policy; 2] = match run.cfg.solver.follower {
        Player::Two => [&*leader, &follower],
        Player::One => [&follower, &*leader],
    };
    s.chi0.check(&spec, 1e-9)?;
    let base = rng::substream(run.seed, "simulate");
    let mut costs = Vec::new();
    let mut counts = Vec::new();
    for r in 0..s.n_rollouts.max(1) {
        let opts = RolloutOptions { t_max: s.t_max, seed: rng::derive(base, r as u64), dense: s.dense };
        let traj = rollout(&spec, &s.chi0, policies, &opts)?;
        costs.push([traj.total_cost(Player::One), traj.total_cost(Player::Two)]);
        counts.push(Player::BOTH.map(|p| traj.events.iter().filter(|e| e.player == p).count()));
        if r == 0 {
            traj.save(&run.out, "trajectory")?;
            run.files.push(run.path("trajectory.csv"));
            run.files.push(run.path("trajectory_events.json"));
        }
    }
    let n = costs.len() as f64;
    let mean_cost = [0, 1].map(|i| costs.iter().map(|c| c[i]).sum::<f64>() / n);
    run.json(
        "simulation.json",
        &SimulateSummary { n_rollouts: costs.len(), t_max: s.t_max, mean_cost, trigger_counts: counts, costs },
    )?;
    if let GameConfig::LqPursuit(lqc) = &run.cfg.game {
        if run.cfg.solver.follower == Player::Two && s.chi0.sigma == [0.0, 0.0] {
            let mut lqc = lqc.clone();
            lqc.z0 = s.chi0.x.clone();
            let baseline = lq::riccati_baseline(&lqc)?;
            let report = lq::run_comparison(&lqc, &baseline, &*leader, &follower, s.t_max, base)?;
            run.files.extend(report.write(&run.path("comparison"))?);
        }
    }
    run.finish("simulate", &c.config)?;
    Ok(0)
}

#[derive(Serialize)]
struct SweepSummary {
    dwell_vs_sigma_opp: Option<clockgame::stats::Correlation>,
    dwell_vs_distance: Option<clockgame::stats::Correlation>,
    control_vs_sigma_opp: Option<clockgame::stats::Correlation>,
}

pub fn sweep(c: &Common) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let spec = run.cfg.spec()?;
    let s = run.cfg.sweep.clone().ok_or_else(|| CliError::Input("config has no sweep section".into()))?;
    let (policy, owner): (Box<dyn Policy + Sync>, Player) = match s.target {
        SweepTarget::Leader => (leader_for(&run, &spec)?, run.cfg.leader_player()),
        SweepTarget::Follower => (Box::new(follower_for(&run)?), run.cfg.solver.follower),
    };
    let rows = lq::policy_sensitivity_sweep(&*policy, owner, &s.base, s.axes, &s.direction, &s.sigma_opp, &s.distances)?;
    let p = run.path("sensitivity.csv");
    write_sensitivity_csv(&rows, std::fs::File::create(&p)?)?;
    run.files.push(p);
    let col = |f: fn(&lq::SensitivityRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (sig, dist, dwell, ctrl) = (col(|r| r.sigma_opp), col(|r| r.distance), col(|r| r.dwell), col(|r| r.control_norm));
    let summary = SweepSummary {
        dwell_vs_sigma_opp: spearman(&sig, &dwell).ok(),
        dwell_vs_distance: spearman(&dist, &dwell).ok(),
        control_vs_sigma_opp: spearman(&sig, &ctrl).ok(),
    };
    run.json("sensitivity_summary.json", &summary)?;
    run.finish("sweep", &c.config)?;
    Ok(0)
}

fn format_matrix(m: &[Vec<f64>]) -> String {
    m.iter()
        .map(|r| {
            // values that round to zero print without a sign
            r.iter().map(|v| format!("{:.10}", if v.abs() < 5e-11 { 0.0 } else { *v })).collect::<Vec<_>>().join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn baseline(c: &Common) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let sol = match &run.cfg.game {
        GameConfig::LqPursuit(l) => lq::riccati_baseline(l)?,
        GameConfig::LinearQuadratic(g) => lq::coupled_riccati(g)?,
        _ => return Err(CliError::Input("the baseline needs an lq_pursuit or linear_quadratic game".into())),
    };
    println!("P =\n{}", format_matrix(&sol.p[0]));
    println!("K1 =\n{}", format_matrix(&sol.k[0]));
    if !sol.k[1].is_empty() && !sol.k[1][0].is_empty() {
        println!("K2 =\n{}", format_matrix(&sol.k[1]));
    }
    println!("residuals = {:.3e} {:.3e}, hurwitz = {}", sol.residuals[0], sol.residuals[1], sol.hurwitz);
    run.json("baseline.json", &sol)?;
    run.finish("baseline", &c.config)?;
    Ok(0)
}

#[derive(Serialize)]
struct VerifyRow {
    chi0: clockgame::AugmentedState,
    value: f64,
    mc_mean: f64,
    mc_std_err: f64,
    gap: f64,
    allowed: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    grid_matches: bool,
    sweep_residual: f64,
    sweep_residual_bound: f64,
    rollout: Vec<VerifyRow>,
    pass: bool,
}

pub fn verify(c: &Common) -> Result<u8, CliError> {
    let mut run = Run::new(c)?;
    let spec = run.cfg.spec()?;
    let grid = run.cfg.grid(&spec)?;
    for name in ["value.json", "value.bin", "follower_policy.json", "report.json"] {
        require(&run.path(name))?;
    }
    let value = ValueGrid::load(&run.path("value"))?;
    let policy = follower_for(&run)?;
    let report: FixedPointReport = serde_json::from_str(&std::fs::read_to_string(run.path("report.json"))?)?;
    let grid_matches = *value.grid == *grid && *policy.grid == *grid;
    if !grid_matches {
        return Err(CliError::Input("saved artifacts were produced on a different grid".into()));
    }
    let leader = leader_for(&run, &spec)?;
    let op = StackelbergOperator::with_follower(
        &spec,
        grid.clone(),
        run.cfg.solver.follower,
        &*leader,
        &run.cfg.operator_options(),
    )?;
    let next = op.apply(&value, MinMode::Hard)?;
    let sweep_residual = clockgame::grid::sup_norm_diff(&next, &value)?;
    // one further sweep moves a converged table by at most about its last step
    let sweep_residual_bound = 2.0 * report.final_residual.max(run.tol) + 1e-9;
    let v = run.cfg.verify.clone();
    let chi0s = if v.chi0.is_empty() {
        let stride = (grid.len() / v.n_states.max(1)).max(1);
        (0..v.n_states).map(|k| grid.state((k * stride + stride / 2) % grid.len())).collect()
    } else {
        v.chi0.clone()
    };
    let sol = FollowerSolution { value, policy, report, operator: op };
    let rows = rollout_consistency(
        &spec,
        &*leader,
        &sol,
        &chi0s,
        v.n_rollouts,
        v.t_max,
        rng::substream(run.seed, "verify"),
    )?;
    let rollout: Vec<VerifyRow> = rows
        .into_iter()
        .map(|r| {
            let gap = (r.mc_mean - r.value).abs();
            let allowed = 3.0 * r.mc_std_err + v.tolerance;
            VerifyRow { chi0: r.chi0, value: r.value, mc_mean: r.mc_mean, mc_std_err: r.mc_std_err, gap, allowed, pass: gap <= allowed }
        })
        .collect();
    let pass = sweep_residual <= sweep_residual_bound && rollout.iter().all(|r| r.pass);
    let out = VerifyReport { grid_matches, sweep_residual, sweep_residual_bound, rollout, pass };
    run.json("verify.json", &out)?;
    run.finish("verify", &c.config)?;
    println!("verify: {}", if pass { "pass" } else { "FAIL" });
    Ok(if pass { 0 } else { 2 })
}
