//! Experiment configuration, read from JSON.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use clockgame::follower::{OperatorOptions, TriggerPolicy};
use clockgame::grid::{GridConfig, GridSpec};
use clockgame::leader::{Feature, LeaderPolicy, PolicyHead, SmoothingConfig};
use clockgame::lq::{self, LQPursuitConfig, LinearQuadraticGame, ScalarPursuitConfig};
use clockgame::sim::{ConstantPolicy, Decision, Policy};
use clockgame::{AugmentedState, GameSpec, Player};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub game: GameConfig,
    #[serde(default)]
    pub grid: Option<GridSettings>,
    #[serde(default)]
    pub leader: Option<LeaderConfig>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub optimize: Option<OptimizeSettings>,
    #[serde(default)]
    pub nash: NashSettings,
    #[serde(default)]
    pub simulate: Option<SimulateSettings>,
    #[serde(default)]
    pub sweep: Option<SweepSettings>,
    #[serde(default)]
    pub verify: VerifySettings,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameConfig {
    Spec(GameSpec),
    LqPursuit(LQPursuitConfig),
    ScalarPursuit(ScalarPursuitConfig),
    /// Riccati baseline only; there is no triggered game behind it.
    LinearQuadratic(LinearQuadraticGame),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub state_nodes: Vec<usize>,
    pub clock_step: f64,
    pub theta_nodes: usize,
    #[serde(default)]
    pub node_budget: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderConfig {
    Constant { dwell: f64, param: Vec<f64> },
    Head { head: HeadSettings, xi: Vec<f64> },
    /// A trigger-policy table written by an earlier run.
    Table { path: std::path::PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSettings {
    pub dwell_features: Vec<Feature>,
    pub gain_features: Vec<Feature>,
    /// Parameter map M; `riccati_gain` uses -K of the leader's baseline gain.
    #[serde(default)]
    pub param_map: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub riccati_gain: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_follower")]
    pub follower: Player,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

fn default_follower() -> Player {
    Player::Two
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    10_000
}
fn default_n_mc() -> usize {
    OperatorOptions::default().n_mc
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            follower: default_follower(),
            tol: default_tol(),
            max_iters: default_max_iters(),
            n_mc: default_n_mc(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSettings {
    pub outer_iters: usize,
    pub alpha: f64,
    #[serde(default)]
    pub decay: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default = "one")]
    pub temperature_decay: f64,
    #[serde(default = "default_min_temp")]
    pub min_temperature: f64,
    pub chi0: Vec<AugmentedState>,
    #[serde(default = "one_usize")]
    pub n_rollouts: usize,
    pub t_max: f64,
}

fn default_grad_tol() -> f64 {
    1e-6
}
fn default_fd_step() -> f64 {
    1e-3
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_min_temp() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NashSettings {
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_damping() -> f64 {
    0.5
}

impl Default for NashSettings {
    fn default() -> Self {
        NashSettings { damping: default_damping() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    pub chi0: AugmentedState,
    pub t_max: f64,
    #[serde(default = "one_usize")]
    pub n_rollouts: usize,
    #[serde(default)]
    pub dense: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    Leader,
    Follower,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub target: SweepTarget,
    pub base: AugmentedState,
    pub axes: usize,
    pub direction: Vec<f64>,
    pub sigma_opp: Vec<f64>,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    /// Initial states for the rollout check; defaults to grid nodes.
    #[serde(default)]
    pub chi0: Vec<AugmentedState>,
    #[serde(default = "default_verify_states")]
    pub n_states: usize,
    #[serde(default = "default_verify_rollouts")]
    pub n_rollouts: usize,
    #[serde(default = "default_verify_t")]
    pub t_max: f64,
    /// Allowed gap beyond three standard errors.
    #[serde(default = "default_verify_tol")]
    pub tolerance: f64,
}

fn default_verify_states() -> usize {
    5
}
fn default_verify_rollouts() -> usize {
    16
}
fn default_verify_t() -> f64 {
    40.0
}
fn default_verify_tol() -> f64 {
    0.05
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            chi0: Vec::new(),
            n_states: default_verify_states(),
            n_rollouts: default_verify_rollouts(),
            t_max: default_verify_t(),
            tolerance: default_verify_tol(),
        }
    }
}

pub fn load(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })
}

impl Config {
    pub fn spec(&self) -> Result<GameSpec, CliError> {
        let spec = match &self.game {
            GameConfig::Spec(s) => s.clone(),
            GameConfig::LqPursuit(c) => lq::build_game(c)?,
            GameConfig::ScalarPursuit(c) => lq::build_scalar_game(c)?,
            GameConfig::LinearQuadratic(_) => {
                return Err(CliError::Input("a linear_quadratic game only supports the baseline command".into()))
            }
        };
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn grid(&self, spec: &GameSpec) -> Result<Arc<GridSpec>, CliError> {
        let g = self.grid.as_ref().ok_or_else(|| CliError::Input("config has no grid section".into()))?;
        let mut cfg = GridConfig::uniform(spec, &g.state_nodes, g.clock_step, g.theta_nodes);
        if let Some(b) = g.node_budget {
            cfg.node_budget = b;
        }
        Ok(Arc::new(GridSpec::new(spec, &cfg)?))
    }

    pub fn operator_options(&self) -> OperatorOptions {
        OperatorOptions { n_mc: self.solver.n_mc, seed: clockgame::rng::substream(self.seed, "operator") }
    }

    fn leader_config(&self) -> Result<&LeaderConfig, CliError> {
        self.leader.as_ref().ok_or_else(|| CliError::Input("config has no leader section".into()))
    }

    pub fn leader_player(&self) -> Player {
        self.solver.follower.other()
    }

    pub fn head(&self, spec: &GameSpec) -> Result<Option<(Arc<PolicyHead>, Vec<f64>)>, CliError> {
        let LeaderConfig::Head { head, xi } = self.leader_config()? else {
            return Ok(None);
        };
        let owner = self.leader_player();
        let map = match (&head.param_map, head.riccati_gain) {
            (Some(m), false) => m.clone(),
            (None, true) => {
                let GameConfig::LqPursuit(c) = &self.game else {
                    return Err(CliError::Input("riccati_gain needs an lq_pursuit game".into()));
                };
                let sol = lq::riccati_baseline(c)?;
                sol.k[owner.index()].iter().map(|r| r.iter().map(|v| -v).collect()).collect()
            }
            _ => return Err(CliError::Input("a head needs exactly one of param_map and riccati_gain".into())),
        };
        let h = PolicyHead::new(spec, owner, head.dwell_features.clone(), head.gain_features.clone(), map)?;
        if xi.len() != h.dim() {
            return Err(CliError::Input(format!("head has {} weights, xi has {}", h.dim(), xi.len())));
        }
        Ok(Some((Arc::new(h), xi.clone())))
    }

    pub fn leader_policy(&self, spec: &GameSpec) -> Result<Box<dyn Policy + Sync>, CliError> {
        Ok(match self.leader_config()? {
            LeaderConfig::Constant { dwell, param } => Box::new(ConstantPolicy(Decision::new(*dwell, param.clone()))),
            LeaderConfig::Head { .. } => {
                let (h, xi) = self.head(spec)?.expect("head config");
                Box::new(LeaderPolicy::new(h, xi)?)
            }
            LeaderConfig::Table { path } => {
                let p = TriggerPolicy::load(path)?;
                if p.owner != self.leader_player() {
                    return Err(CliError::Input(format!("table {} belongs to the wrong player", path.display())));
                }
                Box::new(p)
            }
        })
    }
}
