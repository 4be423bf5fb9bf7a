//! Episode collection, the training loop and stochastic evaluation.

use rand::Rng;

use super::policy::{ActorMode, PolicyBundle};
use super::ppo::{ppo_update, LossReport, Rollout, TrainConfig};
use crate::env::{Env, EnvConfig, TraceRow};
use crate::error::Result;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::types::{EpisodeMetrics, JointAction};

/// Plays one episode with actions sampled from the current actors.
pub fn collect_episode<R: Rng>(
    bundle: &PolicyBundle,
    env_cfg: EnvConfig,
    env_seed: u64,
    rng: &mut R,
    episode_index: u64,
) -> Result<(Rollout, EpisodeMetrics)> {
    play(bundle, env_cfg, env_seed, rng, episode_index, false).map(|(r, m, _)| (r, m))
}

fn play<R: Rng>(
    bundle: &PolicyBundle,
    env_cfg: EnvConfig,
    env_seed: u64,
    rng: &mut R,
    episode_index: u64,
    trace: bool,
) -> Result<(Rollout, EpisodeMetrics, Option<Vec<TraceRow>>)> {
    let (mut env, first) = Env::reset(env_cfg, env_seed)?;
    if trace {
        env.enable_trace();
    }
    let n = env_cfg.n;
    let t_len = env_cfg.episode_len_ttis;
    let mut ro = Rollout {
        n,
        t_len,
        obs: Vec::with_capacity(n * t_len),
        sub_local: Vec::with_capacity(n * t_len),
        power: Vec::with_capacity(n * t_len),
        logp: Vec::with_capacity(n * t_len),
        rewards: Vec::with_capacity(n * t_len),
        states: Vec::with_capacity(t_len + 1),
    };
    let mut obs = first.observations;
    let mut state = first.global_state;
    while !env.is_done() {
        ro.states.push(state.0);
        let mut joint = Vec::with_capacity(n);
        for (i, o) in obs.into_iter().enumerate() {
            let actor = bundle.actor_for(i);
            let head = actor.head(o.as_slice())?;
            let (s, p) = head.sample(rng);
            joint.push(actor.to_action(s, p));
            ro.sub_local.push(s);
            ro.power.push(p);
            ro.logp.push(head.log_prob(s, p));
            ro.obs.push(o.0);
        }
        let step = env.step(&JointAction(joint))?;
        ro.rewards.extend_from_slice(&step.rewards);
        obs = step.observations;
        state = step.global_state;
    }
    ro.states.push(state.0);
    let metrics = env.finalize_metrics(episode_index)?;
    let rows = env.trace().map(<[TraceRow]>::to_vec);
    Ok((ro, metrics, rows))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: PolicyBundle,
    pub history: Vec<EpisodeMetrics>,
    pub losses: Vec<LossReport>,
}

impl TrainOutcome {
    /// Field-wise mean of the last `k` training episodes.
    pub fn tail_mean(&self, k: usize) -> EpisodeMetrics {
        let start = self.history.len().saturating_sub(k);
        let seed = self.history.last().map(|m| m.seed).unwrap_or(0);
        EpisodeMetrics::aggregate(&self.history[start..], seed)
    }
}

pub fn train(
    env_cfg: EnvConfig,
    mode: ActorMode,
    cfg: &TrainConfig,
    seed: u64,
    episodes: u64,
) -> Result<TrainOutcome> {
    train_with(env_cfg, mode, cfg, seed, episodes, |_, _, _| {})
}

/// Training with a per-episode observer, called after every update.
pub fn train_with(
    env_cfg: EnvConfig,
    mode: ActorMode,
    cfg: &TrainConfig,
    seed: u64,
    episodes: u64,
    mut on_episode: impl FnMut(u64, &EpisodeMetrics, &LossReport),
) -> Result<TrainOutcome> {
    env_cfg.validate()?;
    cfg.validate()?;
    let mut bundle = PolicyBundle::new(&env_cfg, mode, cfg, seed);
    let mut history = Vec::with_capacity(episodes as usize);
    let mut losses = Vec::with_capacity(episodes as usize);
    for e in 0..episodes {
        let env_seed = derive_seed(seed, Stream::TrainEpisode, e);
        let mut rng = stream_rng(env_seed, Stream::Policy, 0);
        let (rollout, metrics) = collect_episode(&bundle, env_cfg, env_seed, &mut rng, e)?;
        let report = ppo_update(&mut bundle, &rollout, cfg, e)?;
        on_episode(e, &metrics, &report);
        history.push(metrics);
        losses.push(report);
    }
    Ok(TrainOutcome {
        bundle,
        history,
        losses,
    })
}

/// Runs `episodes` frozen-policy episodes and averages their metrics.
pub fn evaluate(
    bundle: &PolicyBundle,
    env_cfg: EnvConfig,
    episodes: u64,
    seed: u64,
) -> Result<EpisodeMetrics> {
    let per = evaluate_episodes(bundle, env_cfg, episodes, seed)?;
    Ok(EpisodeMetrics::aggregate(&per, seed))
}

pub fn evaluate_episodes(
    bundle: &PolicyBundle,
    env_cfg: EnvConfig,
    episodes: u64,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>> {
    env_cfg.validate()?;
    (0..episodes)
        .map(|k| {
            let env_seed = derive_seed(seed, Stream::EvalEpisode, k);
            let mut rng = stream_rng(env_seed, Stream::Policy, 0);
            collect_episode(bundle, env_cfg, env_seed, &mut rng, k).map(|(_, m)| m)
        })
        .collect()
}

/// Per-TTI trace of evaluation episode `k`, identical in play to the
/// corresponding episode of [`evaluate`].
pub fn trace_eval_episode(
    bundle: &PolicyBundle,
    env_cfg: EnvConfig,
    seed: u64,
    k: u64,
) -> Result<(EpisodeMetrics, Vec<TraceRow>)> {
    env_cfg.validate()?;
    let env_seed = derive_seed(seed, Stream::EvalEpisode, k);
    let mut rng = stream_rng(env_seed, Stream::Policy, 0);
    let (_, m, rows) = play(bundle, env_cfg, env_seed, &mut rng, k, true)?;
    Ok((m, rows.unwrap_or_default()))
}
