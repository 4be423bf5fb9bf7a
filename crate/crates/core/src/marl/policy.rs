//! Actors, the centralized critic and their optimizer state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Mlp, MlpCache, MlpShape};
use super::TrainConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::types::{class_of, Action, TrafficClass, N_POWER_LEVELS};

/// Which actors exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActorMode {
    /// One actor per traffic class, shared by every vehicle of that class.
    #[serde(rename = "0a")]
    Mode0a,
    /// One actor per vehicle.
    #[serde(rename = "0c")]
    Mode0c,
}

impl ActorMode {
    pub fn tag(self) -> &'static str {
        match self {
            ActorMode::Mode0a => "0a",
            ActorMode::Mode0c => "0c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "0a" | "mode0a" | "Mode0a" => Ok(ActorMode::Mode0a),
            "0c" | "mode0c" | "Mode0c" => Ok(ActorMode::Mode0c),
            other => Err(Error::Parse(format!("unknown actor mode `{other}` (expected 0a or 0c)"))),
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

#[cfg(test)]
fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn categorical_entropy(p: &[f64], logp: &[f64]) -> f64 {
    -p.iter().zip(logp).map(|(q, l)| q * l).sum::<f64>()
}

fn sample_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Factorized action distribution: independent subchannel and power softmaxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorHead {
    pub subchannel_logits: Vec<f64>,
    pub power_logits: Vec<f64>,
    pub subchannel_probs: Vec<f64>,
    pub power_probs: Vec<f64>,
    pub subchannel_log_probs: Vec<f64>,
    pub power_log_probs: Vec<f64>,
}

impl ActorHead {
    pub fn from_logits(out: &[f64], n_sub: usize) -> Self {
        let (s, p) = out.split_at(n_sub);
        let subchannel_log_probs = log_softmax(s);
        let power_log_probs = log_softmax(p);
        Self {
            subchannel_logits: s.to_vec(),
            power_logits: p.to_vec(),
            subchannel_probs: subchannel_log_probs.iter().map(|l| l.exp()).collect(),
            power_probs: power_log_probs.iter().map(|l| l.exp()).collect(),
            subchannel_log_probs,
            power_log_probs,
        }
    }

    /// Log-probability of a slice-local subchannel and power index.
    pub fn log_prob(&self, sub_local: usize, power: usize) -> f64 {
        self.subchannel_log_probs[sub_local] + self.power_log_probs[power]
    }

    pub fn subchannel_entropy(&self) -> f64 {
        categorical_entropy(&self.subchannel_probs, &self.subchannel_log_probs)
    }

    pub fn power_entropy(&self) -> f64 {
        categorical_entropy(&self.power_probs, &self.power_log_probs)
    }

    pub fn entropy(&self) -> f64 {
        self.subchannel_entropy() + self.power_entropy()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        (
            sample_categorical(&self.subchannel_probs, rng),
            sample_categorical(&self.power_probs, rng),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    /// Absolute index of the first subchannel in this actor's pool slice.
    pub slice_start: usize,
    pub slice_len: usize,
}

impl Actor {
    pub fn head(&self, obs: &[f64]) -> Result<ActorHead> {
        Ok(ActorHead::from_logits(&self.net.forward(obs)?, self.slice_len))
    }

    pub fn head_cached(&self, obs: &[f64], cache: &mut MlpCache) -> Result<ActorHead> {
        Ok(ActorHead::from_logits(
            &self.net.forward_cached(obs, cache)?,
            self.slice_len,
        ))
    }

    pub fn to_action(&self, sub_local: usize, power: usize) -> Action {
        Action {
            subchannel: self.slice_start + sub_local,
            power_index: power,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Actors plus the centralized critic.
///
/// The critic reads the full global state and emits one value per vehicle,
/// so each agent's advantage is computed against its own return.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub mode: ActorMode,
    pub n: usize,
    pub actors: Vec<Actor>,
    pub critic: Mlp,
    pub actor_opt: Vec<Adam>,
    pub critic_opt: Adam,
}

impl PolicyBundle {
    fn actor_classes(mode: ActorMode, n: usize) -> Vec<TrafficClass> {
        match mode {
            ActorMode::Mode0a => TrafficClass::ALL.to_vec(),
            ActorMode::Mode0c => (0..n).map(|i| class_of(i, n)).collect(),
        }
    }

    fn build(env: &EnvConfig, mode: ActorMode, cfg: &TrainConfig, mut make: impl FnMut(MlpShape, bool) -> Mlp) -> Self {
        let obs = env.obs_dim();
        let actors: Vec<Actor> = Self::actor_classes(mode, env.n)
            .into_iter()
            .map(|class| {
                let slice = env.pool.slice(class);
                let shape = MlpShape {
                    in_dim: obs,
                    hidden: cfg.actor_hidden,
                    out_dim: slice.len() + N_POWER_LEVELS,
                    layer_norm: false,
                };
                Actor {
                    net: make(shape, true),
                    slice_start: slice.start,
                    slice_len: slice.len(),
                }
            })
            .collect();
        let critic_shape = MlpShape {
            in_dim: env.state_dim(),
            hidden: cfg.critic_hidden,
            out_dim: env.n,
            layer_norm: true,
        };
        let critic = make(critic_shape, false);
        let adam = |len| Adam::new(len, cfg.actor_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let actor_opt = actors.iter().map(|a| adam(a.net.params().len())).collect();
        let critic_opt = Adam::new(
            critic.params().len(),
            cfg.critic_lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        );
        Self {
            mode,
            n: env.n,
            actors,
            critic,
            actor_opt,
            critic_opt,
        }
    }

    /// Orthogonal initialization: hidden gain sqrt(2), policy heads 0.01,
    /// critic head 1.0, zero biases.
    pub fn new(env: &EnvConfig, mode: ActorMode, cfg: &TrainConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        Self::build(env, mode, cfg, |shape, is_actor| {
            let out_gain = if is_actor { 0.01 } else { 1.0 };
            Mlp::orthogonal(shape, std::f64::consts::SQRT_2, out_gain, &mut rng)
        })
    }

    /// All parameters zero: every actor is exactly uniform.
    pub fn zeros(env: &EnvConfig, mode: ActorMode, cfg: &TrainConfig) -> Self {
        Self::build(env, mode, cfg, |shape, _| Mlp::zeros(shape))
    }

    /// Index of the actor that drives vehicle `id`.
    pub fn actor_index(&self, id: usize) -> usize {
        match self.mode {
            ActorMode::Mode0a => class_of(id, self.n).index(),
            ActorMode::Mode0c => id,
        }
    }

    pub fn actor_for(&self, id: usize) -> &Actor {
        &self.actors[self.actor_index(id)]
    }

    pub fn values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.critic.forward(state)
    }

    pub fn all_finite(&self) -> bool {
        self.actors
            .iter()
            .all(|a| a.net.params().iter().all(|p| p.is_finite()))
            && self.critic.params().iter().all(|p| p.is_finite())
    }
}
