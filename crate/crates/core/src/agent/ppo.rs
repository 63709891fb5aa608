//! PPO: generalized advantage estimation, the clipped surrogate with analytic
//! gradients, Adam, and the epoch/minibatch update.

use rand::seq::SliceRandom;
use rand::Rng;

use super::policy::{gaussian_entropy, gaussian_log_prob, ActorCritic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub rollout_steps: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_updates: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            epochs_per_update: 10,
            minibatch_size: 64,
            rollout_steps: 2048,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_updates: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.rollout_steps == 0 || self.minibatch_size == 0 || self.epochs_per_update == 0 {
            return bad("rollout_steps, minibatch_size and epochs_per_update must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// GAE over a sequence where `next_values[t]` is the bootstrap value after step `t`
/// (zero after a true termination) and `dones[t]` marks an episode boundary.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && next_values.len() == n && dones.len() == n, "GAE inputs must have equal lengths");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        let carry = if dones[t] { 0.0 } else { running };
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Classic form: `values` has one extra trailing entry, the value after the last step.
pub fn gae_advantages(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(values.len(), rewards.len() + 1, "values need a bootstrap entry");
    let next: Vec<f64> = (0..rewards.len()).map(|t| if dones[t] { 0.0 } else { values[t + 1] }).collect();
    gae(rewards, &values[..rewards.len()], &next, dones, gamma, lambda)
}

/// Transitions for one update, stored flat.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: Vec<f64>,
    pub value: Vec<f64>,
    pub reward: Vec<f64>,
    pub next_value: Vec<f64>,
    pub done: Vec<bool>,
    pub advantage: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self { obs_dim, act_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, obs: &[f64], pre_squash: &[f64], log_prob: f64, value: f64, reward: f64, next_value: f64, done: bool) {
        self.obs.extend_from_slice(obs);
        self.pre_squash.extend_from_slice(pre_squash);
        self.log_prob.push(log_prob);
        self.value.push(value);
        self.reward.push(reward);
        self.next_value.push(next_value);
        self.done.push(done);
    }

    pub fn append(&mut self, other: RolloutBuffer) {
        self.obs.extend(other.obs);
        self.pre_squash.extend(other.pre_squash);
        self.log_prob.extend(other.log_prob);
        self.value.extend(other.value);
        self.reward.extend(other.reward);
        self.next_value.extend(other.next_value);
        self.done.extend(other.done);
        self.advantage.extend(other.advantage);
        self.returns.extend(other.returns);
    }

    pub fn obs_at(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn pre_squash_at(&self, i: usize) -> &[f64] {
        &self.pre_squash[i * self.act_dim..(i + 1) * self.act_dim]
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let (a, r) = gae(&self.reward, &self.value, &self.next_value, &self.done, gamma, lambda);
        self.advantage = a;
        self.returns = r;
    }

    /// Rescales advantages to zero mean and unit variance.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantage.len() as f64;
        if n == 0.0 {
            return;
        }
        let mean = self.advantage.iter().sum::<f64>() / n;
        let var = self.advantage.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt() + 1e-8;
        self.advantage.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// Full PPO loss on the minibatch `idx` and its gradient in
/// [`ActorCritic::flat_params`] order:
/// `L = −mean(min(ρA, clip(ρ)A)) + c_v·mean((V − R)²) − c_e·H`.
pub fn loss_and_grad(ac: &ActorCritic, buf: &RolloutBuffer, idx: &[usize], cfg: &PpoConfig) -> (LossStats, Vec<f64>) {
    let np = ac.policy.net.num_params();
    let na = ac.policy.log_std.len();
    let mut grad = vec![0.0; ac.num_params()];
    let (gp, rest) = grad.split_at_mut(np);
    let (gs, gv) = rest.split_at_mut(na);
    let b = idx.len() as f64;
    let log_std = &ac.policy.log_std;
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut stats = LossStats::default();
    let mut dmean = vec![0.0; na];

    for &i in idx {
        let obs = buf.obs_at(i);
        let u = buf.pre_squash_at(i);
        let a = buf.advantage[i];

        let trace = ac.policy.net.forward_trace(obs);
        let mean = trace.output();
        // the squash correction depends only on u and cancels in the ratio
        let old_gauss = buf.log_prob[i] + u.iter().map(|&v| super::policy::log_squash_jacobian(v)).sum::<f64>();
        let log_ratio = gaussian_log_prob(u, mean, log_std) - old_gauss;
        let ratio = log_ratio.exp();
        let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        let (surr, surr_clip) = (ratio * a, clipped * a);
        stats.policy_loss -= surr.min(surr_clip) / b;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / b;
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            stats.clip_fraction += 1.0 / b;
        }
        // ∂L/∂log π for this sample; zero when the clipped branch binds
        let coef = if surr <= surr_clip { -a * ratio / b } else { 0.0 };
        if coef != 0.0 {
            for j in 0..na {
                let diff = u[j] - mean[j];
                dmean[j] = coef * diff * inv_var[j];
                gs[j] += coef * (diff * diff * inv_var[j] - 1.0);
            }
            ac.policy.net.backward(&trace, &dmean, gp);
        }

        let vtrace = ac.value.forward_trace(obs);
        let err = vtrace.output()[0] - buf.returns[i];
        stats.value_loss += err * err / b;
        ac.value.backward(&vtrace, &[2.0 * cfg.value_coef * err / b], gv);
    }
    stats.entropy = gaussian_entropy(log_std);
    for g in gs.iter_mut() {
        *g -= cfg.entropy_coef;
    }
    stats.total = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    stats.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    (stats, grad)
}

/// Scales `grad` so its global norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + 1e-12);
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Bias-corrected adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { lr, beta1, beta2, epsilon, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Epochs of shuffled minibatch steps over a buffer whose advantages are already computed.
pub fn ppo_update(
    ac: &mut ActorCritic,
    adam: &mut Adam,
    buf: &mut RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<LossStats> {
    buf.normalize_advantages();
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut params = ac.flat_params();
    let mut mean = LossStats::default();
    let mut batches = 0.0;
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let (stats, mut grad) = loss_and_grad(ac, buf, idx, cfg);
            if !stats.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite PPO loss {stats:?} on minibatch {idx:?}"
                )));
            }
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut params, &grad);
            ac.set_flat_params(&params);
            batches += 1.0;
            mean.policy_loss += stats.policy_loss;
            mean.value_loss += stats.value_loss;
            mean.entropy += stats.entropy;
            mean.total += stats.total;
            mean.clip_fraction += stats.clip_fraction;
            mean.approx_kl += stats.approx_kl;
            mean.grad_norm += stats.grad_norm;
        }
    }
    if batches > 0.0 {
        for v in [
            &mut mean.policy_loss,
            &mut mean.value_loss,
            &mut mean.entropy,
            &mut mean.total,
            &mut mean.clip_fraction,
            &mut mean.approx_kl,
            &mut mean.grad_norm,
        ] {
            *v /= batches;
        }
    }
    Ok(mean)
}
