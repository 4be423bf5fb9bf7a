//! Multi-agent PPO with a centralized critic.

pub mod checkpoint;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod train;

pub use policy::{Actor, ActorHead, ActorMode, Adam, PolicyBundle};
pub use ppo::{gae_advantages, ppo_update, LossReport, Rollout, TrainConfig};
pub use train::{
    collect_episode, evaluate, evaluate_episodes, trace_eval_episode, train, train_with, TrainOutcome,
};
