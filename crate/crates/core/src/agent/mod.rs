//! PPO learner and the fixed-wrench baseline.

pub mod baseline;
pub mod eval;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod tasks;
pub mod train;

use crate::error::Result;

/// Outcome of one environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Task progress reported in the learning curve.
    pub removed_fraction: f64,
    /// Interaction wrench magnitude reported in the learning curve.
    pub wrench: f64,
}

/// Episodic environment with raw actions in `[-1, 1]^act_dim`.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}
