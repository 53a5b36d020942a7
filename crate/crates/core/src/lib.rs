//! Solver and simulator for self-triggered two-player stochastic games on
//! piecewise deterministic Markov processes.
//!
//! Each player commits at a trigger instant to a dwell time and a control
//! parameter, holds its open-loop control until the dwell expires, and pays a
//! trigger cost. The augmented state `(x, sigma_1, theta_1, sigma_2, theta_2)`
//! carries both residual clocks and held parameters, which makes the process
//! Markov and the game amenable to dynamic programming.

pub mod error;
pub mod follower;
pub mod grid;
pub mod lq;
pub mod leader;
pub mod model;
pub mod nash;
pub mod rng;
pub mod sim;
pub mod stats;

#[cfg(test)]
pub(crate) mod fixtures;

pub use error::{Error, Result};
pub use model::{AugmentedState, GameSpec, Player, PlayerSpec};
pub use sim::{rollout, Decision, Policy, Trajectory};
