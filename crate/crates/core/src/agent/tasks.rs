//! Environments exposed to the learner.

use super::{EnvStep, Environment};
use crate::env::{EnvConfig, EpisodeSeeds, ScrapeEnv, ACT_DIM, OBS_DIM};
use crate::error::Result;
use crate::rng::derive_seed;

/// Base seeds of the per-episode hardness field, particle layout and joint friction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeedBases {
    pub noise: u64,
    pub spatial: u64,
    pub friction: u64,
}

/// Seeds of the training episode identified by `episode_seed`.
pub fn training_episode_seeds(bases: &SeedBases, episode_seed: u64) -> EpisodeSeeds {
    EpisodeSeeds {
        noise: derive_seed(bases.noise, &[episode_seed]),
        spatial: derive_seed(bases.spatial, &[episode_seed]),
        friction: derive_seed(bases.friction, &[episode_seed]),
    }
}

/// The scraping MDP with normalized observations and raw actions.
#[derive(Debug, Clone)]
pub struct ScrapeTask {
    env: ScrapeEnv,
    bases: SeedBases,
}

impl ScrapeTask {
    pub fn new(cfg: EnvConfig, bases: SeedBases) -> Result<Self> {
        Ok(Self { env: ScrapeEnv::new(cfg, &training_episode_seeds(&bases, 0))?, bases })
    }

    pub fn inner(&self) -> &ScrapeEnv {
        &self.env
    }
}

impl Environment for ScrapeTask {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>> {
        let obs = self.env.reset(&training_episode_seeds(&self.bases, episode_seed))?;
        Ok(self.env.policy_input(&obs).to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let out = self.env.step_raw(action)?;
        Ok(EnvStep {
            obs: self.env.policy_input(&out.observation).to_vec(),
            reward: out.reward.total,
            terminated: out.terminated,
            truncated: out.truncated,
            removed_fraction: out.info.removed_fraction,
            wrench: self.env.config().reward.wrench_norm.apply(&out.info.mean_wrench),
        })
    }
}

/// One-dimensional force tracking: the measured force follows the command
/// through a first-order lag, `F ← F + α(f_cmd − F)`, and the reward is
/// `−|F − target|`. With `α = 0.5` and `f_cmd ≤ 10` the target of 4 N is
/// reachable in one step, so the optimal return is exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceTrackingEnv {
    pub target: f64,
    pub f_max: f64,
    pub lag: f64,
    pub horizon: usize,
    force: f64,
    t: usize,
}

impl Default for ForceTrackingEnv {
    fn default() -> Self {
        Self { target: 4.0, f_max: 10.0, lag: 0.5, horizon: 20, force: 0.0, t: 0 }
    }
}

impl ForceTrackingEnv {
    fn obs(&self) -> Vec<f64> {
        vec![self.force / self.target - 1.0]
    }

    pub fn force(&self) -> f64 {
        self.force
    }

    /// Return of an episode driven by `policy` from the initial state.
    pub fn rollout(&mut self, mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
        let mut obs = self.reset(0)?;
        let mut total = 0.0;
        loop {
            let a = policy(&obs)?;
            let s = self.step(&a)?;
            total += s.reward;
            if s.terminated || s.truncated {
                return Ok(total);
            }
            obs = s.obs;
        }
    }
}

impl Environment for ForceTrackingEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _episode_seed: u64) -> Result<Vec<f64>> {
        self.force = 0.0;
        self.t = 0;
        Ok(self.obs())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let cmd = 0.5 * (action[0].clamp(-1.0, 1.0) + 1.0) * self.f_max;
        self.force += self.lag * (cmd - self.force);
        self.t += 1;
        Ok(EnvStep {
            obs: self.obs(),
            reward: -(self.force - self.target).abs(),
            terminated: false,
            truncated: self.t >= self.horizon,
            removed_fraction: 0.0,
            wrench: self.force,
        })
    }
}
