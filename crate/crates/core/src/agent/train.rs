//! Rollout/update loop over one or more environment workers.
//!
//! Each worker owns its environment and random stream; rollouts run in
//! parallel and are merged in worker order, and the update itself is serial,
//! so the result depends only on the seed and the worker count.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policy::ActorCritic;
use super::ppo::{ppo_update, Adam, LossStats, PpoConfig, RolloutBuffer};
use super::{EnvStep, Environment};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

const INIT_TAG: u64 = 0x1417;
const LEARNER_TAG: u64 = 0x1EA2;
const WORKER_TAG: u64 = 0x3012;
const EPISODE_TAG: u64 = 0xE915;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub seed: u64,
    pub workers: usize,
    /// Checkpoint interval in updates; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { ppo: PpoConfig::default(), seed: 0, workers: 1, checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub update: usize,
    /// Mean return of episodes finished during the update's rollout (NaN if none).
    pub mean_return: f64,
    pub mean_removed_fraction: f64,
    /// Mean per-step interaction wrench over the rollout.
    pub mean_wrench: f64,
}

pub const CURVE_HEADER: &str = "update,mean_return,mean_removed_fraction,mean_wrench";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.update, r.mean_return, r.mean_removed_fraction, r.mean_wrench);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: ActorCritic,
    pub curve: Vec<CurveRow>,
    pub losses: Vec<LossStats>,
}

/// Initial networks for a configuration, exactly as training starts from them.
pub fn initial_agent(obs_dim: usize, act_dim: usize, cfg: &TrainConfig) -> ActorCritic {
    let mut rng = seeded_rng(derive_seed(cfg.seed, &[INIT_TAG]));
    ActorCritic::new(obs_dim, act_dim, &cfg.ppo.hidden, cfg.ppo.init_log_std, &mut rng)
}

struct Worker<E> {
    index: u64,
    env: E,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    episode: u64,
    ep_return: f64,
}

#[derive(Default)]
struct RolloutStats {
    returns: Vec<f64>,
    removed: Vec<f64>,
    wrench_sum: f64,
    steps: usize,
}

impl<E: Environment> Worker<E> {
    fn episode_seed(&self, base: u64) -> u64 {
        derive_seed(base, &[EPISODE_TAG, self.index, self.episode])
    }

    fn collect(&mut self, ac: &ActorCritic, steps: usize, base: u64, cfg: &PpoConfig) -> Result<(RolloutBuffer, RolloutStats)> {
        let mut buf = RolloutBuffer::new(self.env.obs_dim(), self.env.act_dim());
        let mut stats = RolloutStats::default();
        for _ in 0..steps {
            let sample = ac.policy.sample(&self.obs, &mut self.rng)?;
            let value = ac.value_of(&self.obs);
            let EnvStep { obs, reward, terminated, truncated, removed_fraction, wrench } = self.env.step(&sample.action)?;
            if !reward.is_finite() {
                return Err(Error::Numerical(format!("environment returned reward {reward}")));
            }
            let next_value = if terminated { 0.0 } else { ac.value_of(&obs) };
            let done = terminated || truncated;
            buf.push(&self.obs, &sample.pre_squash, sample.log_prob, value, reward, next_value, done);
            self.ep_return += reward;
            stats.wrench_sum += wrench;
            stats.steps += 1;
            if done {
                stats.returns.push(self.ep_return);
                stats.removed.push(removed_fraction);
                self.ep_return = 0.0;
                self.episode += 1;
                self.obs = self.env.reset(self.episode_seed(base))?;
            } else {
                self.obs = obs;
            }
        }
        buf.compute_advantages(cfg.gamma, cfg.gae_lambda);
        Ok((buf, stats))
    }
}

/// Runs `cfg.ppo.total_updates` rollout/update rounds. `on_checkpoint` receives
/// the update count and the current agent at each checkpoint interval and once
/// at the end.
pub fn train<E, F, C>(make_env: F, cfg: &TrainConfig, mut on_checkpoint: C) -> Result<TrainOutcome>
where
    E: Environment,
    F: Fn(usize) -> Result<E>,
    C: FnMut(usize, &ActorCritic) -> Result<()>,
{
    cfg.ppo.validate()?;
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let mut workers = Vec::with_capacity(cfg.workers);
    for w in 0..cfg.workers {
        let index = w as u64;
        let mut worker = Worker {
            index,
            env: make_env(w)?,
            rng: seeded_rng(derive_seed(cfg.seed, &[WORKER_TAG, index])),
            obs: Vec::new(),
            episode: 0,
            ep_return: 0.0,
        };
        worker.obs = worker.env.reset(worker.episode_seed(cfg.seed))?;
        workers.push(worker);
    }
    let (obs_dim, act_dim) = (workers[0].env.obs_dim(), workers[0].env.act_dim());
    let mut ac = initial_agent(obs_dim, act_dim, cfg);
    let p = &cfg.ppo;
    let mut adam = Adam::new(ac.num_params(), p.learning_rate, p.adam_beta1, p.adam_beta2, p.adam_epsilon);
    let mut learner_rng = seeded_rng(derive_seed(cfg.seed, &[LEARNER_TAG]));
    let per_worker = p.rollout_steps.div_ceil(cfg.workers);
    let mut curve = Vec::with_capacity(p.total_updates);
    let mut losses = Vec::with_capacity(p.total_updates);

    for update in 0..p.total_updates {
        let snapshot = &ac;
        let results: Vec<Result<(RolloutBuffer, RolloutStats)>> = if cfg.workers == 1 {
            workers.iter_mut().map(|w| w.collect(snapshot, per_worker, cfg.seed, p)).collect()
        } else {
            workers.par_iter_mut().map(|w| w.collect(snapshot, per_worker, cfg.seed, p)).collect()
        };
        let mut buf = RolloutBuffer::new(obs_dim, act_dim);
        let mut stats = RolloutStats::default();
        for r in results {
            let (b, s) = r?;
            buf.append(b);
            stats.returns.extend(s.returns);
            stats.removed.extend(s.removed);
            stats.wrench_sum += s.wrench_sum;
            stats.steps += s.steps;
        }
        let loss = ppo_update(&mut ac, &mut adam, &mut buf, p, &mut learner_rng)?;
        losses.push(loss);
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        curve.push(CurveRow {
            update: update + 1,
            mean_return: mean(&stats.returns),
            mean_removed_fraction: mean(&stats.removed),
            mean_wrench: stats.wrench_sum / stats.steps.max(1) as f64,
        });
        if cfg.checkpoint_every > 0 && (update + 1) % cfg.checkpoint_every == 0 && update + 1 < p.total_updates {
            on_checkpoint(update + 1, &ac)?;
        }
    }
    on_checkpoint(p.total_updates, &ac)?;
    Ok(TrainOutcome { agent: ac, curve, losses })
}
