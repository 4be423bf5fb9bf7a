//! GAE, the PPO-clip surrogate and the update step.

use serde::{Deserialize, Serialize};

use super::nn::{clip_grad_norm, MlpCache};
use super::policy::{Actor, PolicyBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip_norm: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    /// Episodes over which the entropy coefficient anneals linearly.
    pub entropy_anneal_episodes: u64,
    pub epochs_per_update: usize,
    pub value_loss_coef: f64,
    pub adv_norm_eps: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            grad_clip_norm: 0.5,
            entropy_start: 0.05,
            entropy_end: 0.001,
            entropy_anneal_episodes: 3000,
            epochs_per_update: 4,
            value_loss_coef: 0.5,
            adv_norm_eps: 1e-8,
            actor_hidden: 128,
            critic_hidden: 256,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return Err(Error::InvalidConfig("gae_lambda must be in (0, 1]".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::InvalidConfig("clip_eps must be > 0".into()));
        }
        if !(self.entropy_start >= self.entropy_end && self.entropy_end >= 0.0) {
            return Err(Error::InvalidConfig(
                "entropy schedule must satisfy start >= end >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 || self.epochs_per_update == 0 {
            return Err(Error::InvalidConfig(
                "hidden sizes and epochs_per_update must be >= 1".into(),
            ));
        }
        if !(self.grad_clip_norm > 0.0 && self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rates and grad_clip_norm must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Linear anneal from `entropy_start` to `entropy_end`, flat afterwards.
    pub fn entropy_coef(&self, episode: u64) -> f64 {
        let frac = if self.entropy_anneal_episodes == 0 {
            1.0
        } else {
            (episode as f64 / self.entropy_anneal_episodes as f64).min(1.0)
        };
        self.entropy_start + (self.entropy_end - self.entropy_start) * frac
    }
}

/// Generalized advantage estimates and the matching returns.
///
/// `delta_t = r_t + gamma v_{t+1} - v_t` with `v_T = bootstrap`, and
/// `A_t = delta_t + gamma lambda A_{t+1}`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    if rewards.is_empty() {
        return Err(Error::LengthMismatch("empty trajectory".into()));
    }
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut next_adv = 0.0;
    for t in (0..t_len).rev() {
        let next_v = if t + 1 < t_len { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// One episode of experience for every vehicle.
///
/// Per-agent arrays are indexed `t * n + i`; `states` has `t_len + 1` rows,
/// the last being the bootstrap state.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub n: usize,
    pub t_len: usize,
    pub obs: Vec<Vec<f64>>,
    pub sub_local: Vec<usize>,
    pub power: Vec<usize>,
    pub logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Rollout {
    pub fn idx(&self, t: usize, i: usize) -> usize {
        t * self.n + i
    }

    fn check(&self) -> Result<()> {
        let k = self.n * self.t_len;
        let lens = [
            self.obs.len(),
            self.sub_local.len(),
            self.power.len(),
            self.logp.len(),
            self.rewards.len(),
        ];
        if self.t_len == 0 || lens.iter().any(|&l| l != k) || self.states.len() != self.t_len + 1 {
            return Err(Error::LengthMismatch(format!(
                "rollout of {} agents x {} steps has field lengths {:?} and {} states",
                self.n,
                self.t_len,
                lens,
                self.states.len()
            )));
        }
        Ok(())
    }
}

/// A training sample for one actor.
#[derive(Debug, Clone)]
pub struct ActorSample<'a> {
    pub obs: &'a [f64],
    pub sub_local: usize,
    pub power: usize,
    pub old_logp: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorLossParts {
    pub policy_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Mean clipped-surrogate loss minus `entropy_coef` times mean entropy, and
/// its exact gradient with respect to the actor's parameters.
pub fn actor_loss_and_grad(
    actor: &Actor,
    samples: &[ActorSample<'_>],
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<(f64, ActorLossParts, Vec<f64>)> {
    let mut grad = actor.net.zero_grad();
    let mut parts = ActorLossParts::default();
    if samples.is_empty() {
        return Ok((0.0, parts, grad));
    }
    let inv = 1.0 / samples.len() as f64;
    let mut cache = MlpCache::default();
    let mut clipped = 0usize;
    let n_sub = actor.slice_len;
    let mut d_out = vec![0.0; actor.net.shape().out_dim];
    for s in samples {
        let head = actor.head_cached(s.obs, &mut cache)?;
        let logp = head.log_prob(s.sub_local, s.power);
        let ratio = (logp - s.old_logp).exp();
        let unclipped = ratio * s.advantage;
        let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let clipped_obj = clipped_ratio * s.advantage;
        let objective = unclipped.min(clipped_obj);
        // The unclipped branch carries the gradient whenever it is the min.
        let d_logp = if unclipped <= clipped_obj { -ratio * s.advantage } else { 0.0 };
        if (ratio - clipped_ratio).abs() > 0.0 {
            clipped += 1;
        }
        let h_sub = head.subchannel_entropy();
        let h_pow = head.power_entropy();
        parts.policy_loss -= objective * inv;
        parts.entropy += (h_sub + h_pow) * inv;
        parts.approx_kl += (s.old_logp - logp) * inv;

        for k in 0..n_sub {
            let p = head.subchannel_probs[k];
            let onehot = if k == s.sub_local { 1.0 } else { 0.0 };
            let d_ent = -p * (head.subchannel_log_probs[k] + h_sub);
            d_out[k] = inv * (d_logp * (onehot - p) - entropy_coef * d_ent);
        }
        for k in 0..head.power_probs.len() {
            let p = head.power_probs[k];
            let onehot = if k == s.power { 1.0 } else { 0.0 };
            let d_ent = -p * (head.power_log_probs[k] + h_pow);
            d_out[n_sub + k] = inv * (d_logp * (onehot - p) - entropy_coef * d_ent);
        }
        actor.net.backward(&cache, &d_out, &mut grad);
    }
    parts.clip_fraction = clipped as f64 * inv;
    let loss = parts.policy_loss - entropy_coef * parts.entropy;
    Ok((loss, parts, grad))
}

/// `value_coef * mean_{t,i} (V_i(s_t) - R_{t,i})^2` and its gradient.
pub fn critic_loss_and_grad(
    bundle: &PolicyBundle,
    states: &[Vec<f64>],
    returns: &[f64],
    value_coef: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = bundle.n;
    if returns.len() != states.len() * n {
        return Err(Error::LengthMismatch(format!(
            "{} returns for {} states x {} agents",
            returns.len(),
            states.len(),
            n
        )));
    }
    let mut grad = bundle.critic.zero_grad();
    let inv = 1.0 / returns.len().max(1) as f64;
    let mut cache = MlpCache::default();
    let mut loss = 0.0;
    let mut d_out = vec![0.0; n];
    for (t, s) in states.iter().enumerate() {
        let v = bundle.critic.forward_cached(s, &mut cache)?;
        for i in 0..n {
            let err = v[i] - returns[t * n + i];
            loss += value_coef * err * err * inv;
            d_out[i] = 2.0 * value_coef * err * inv;
        }
        bundle.critic.backward(&cache, &d_out, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub entropy_coef: f64,
}

/// Advantages for every `(t, i)`, normalized jointly, plus per-agent returns.
pub fn rollout_advantages(
    bundle: &PolicyBundle,
    rollout: &Rollout,
    gamma: f64,
    lambda: f64,
    norm_eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rollout.n;
    let t_len = rollout.t_len;
    let values: Vec<Vec<f64>> = rollout
        .states
        .iter()
        .map(|s| bundle.values(s))
        .collect::<Result<_>>()?;
    let mut adv = vec![0.0; n * t_len];
    let mut ret = vec![0.0; n * t_len];
    for i in 0..n {
        let r: Vec<f64> = (0..t_len).map(|t| rollout.rewards[rollout.idx(t, i)]).collect();
        let v: Vec<f64> = (0..t_len).map(|t| values[t][i]).collect();
        let (a, g) = gae_advantages(&r, &v, values[t_len][i], gamma, lambda)?;
        for t in 0..t_len {
            adv[rollout.idx(t, i)] = a[t];
            ret[rollout.idx(t, i)] = g[t];
        }
    }
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
    let sd = var.sqrt() + norm_eps;
    for a in adv.iter_mut() {
        *a = (*a - mean) / sd;
    }
    Ok((adv, ret))
}

/// Samples owned by each actor.
pub fn actor_samples<'a>(
    bundle: &PolicyBundle,
    rollout: &'a Rollout,
    advantages: &[f64],
) -> Vec<Vec<ActorSample<'a>>> {
    let mut per_actor: Vec<Vec<ActorSample<'a>>> = vec![Vec::new(); bundle.actors.len()];
    for t in 0..rollout.t_len {
        for i in 0..rollout.n {
            let k = rollout.idx(t, i);
            per_actor[bundle.actor_index(i)].push(ActorSample {
                obs: &rollout.obs[k],
                sub_local: rollout.sub_local[k],
                power: rollout.power[k],
                old_logp: rollout.logp[k],
                advantage: advantages[k],
            });
        }
    }
    per_actor
}

/// Full-batch PPO over one rollout: `epochs_per_update` passes, each taking
/// one clipped-gradient adaptive-moment step per actor and for the critic.
pub fn ppo_update(
    bundle: &mut PolicyBundle,
    rollout: &Rollout,
    cfg: &TrainConfig,
    episode_index: u64,
) -> Result<LossReport> {
    rollout.check()?;
    let (advantages, returns) =
        rollout_advantages(bundle, rollout, cfg.gamma, cfg.gae_lambda, cfg.adv_norm_eps)?;
    let coef = cfg.entropy_coef(episode_index);
    let states = &rollout.states[..rollout.t_len];
    let mut report = LossReport {
        entropy_coef: coef,
        ..LossReport::default()
    };
    let n_actor_samples = rollout.n * rollout.t_len;
    for epoch in 0..cfg.epochs_per_update {
        let per_actor = actor_samples(bundle, rollout, &advantages);
        let last = epoch + 1 == cfg.epochs_per_update;
        for (a, samples) in per_actor.iter().enumerate() {
            if samples.is_empty() {
                continue;
            }
            let (loss, parts, mut grad) =
                actor_loss_and_grad(&bundle.actors[a], samples, cfg.clip_eps, coef)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "actor {a} loss {loss} at episode {episode_index}, epoch {epoch}"
                )));
            }
            clip_grad_norm(&mut grad, cfg.grad_clip_norm);
            bundle.actor_opt[a].apply(bundle.actors[a].net.params_mut(), &grad);
            if last {
                let w = samples.len() as f64 / n_actor_samples as f64;
                report.policy_loss += w * parts.policy_loss;
                report.entropy += w * parts.entropy;
                report.approx_kl += w * parts.approx_kl;
                report.clip_fraction += w * parts.clip_fraction;
            }
        }
        let (vloss, mut vgrad) = critic_loss_and_grad(bundle, states, &returns, cfg.value_loss_coef)?;
        if !vloss.is_finite() || vgrad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "critic loss {vloss} at episode {episode_index}, epoch {epoch}"
            )));
        }
        clip_grad_norm(&mut vgrad, cfg.grad_clip_norm);
        bundle.critic_opt.apply(bundle.critic.params_mut(), &vgrad);
        if last {
            report.value_loss = vloss;
        }
    }
    if !bundle.all_finite() {
        return Err(Error::NonFinite(format!(
            "parameters diverged at episode {episode_index}"
        )));
    }
    Ok(report)
}
