//! Mode 0 sidelink resource-allocation simulator.
//!
//! The crate models a two-lane highway ring of vehicle UEs contending for
//! PC5 sidelink subchannels, trains multi-agent PPO policies against it with
//! a centralized critic, and provides the closed-form baselines used to judge
//! the trained policies.
//!
//! Layout:
//!
//! * [`types`] – vehicles, traffic classes, pools, actions, metrics.
//! * [`mobility`] – seeded IDM car-following on a ring road.
//! * [`channel`] – path loss, shadowing, fading, SINR and PDR.
//! * [`env`] – the stepping environment and reward functions.
//! * [`marl`] – MLPs, PPO-clip with GAE, training and evaluation.
//! * [`analytics`] – collision floors, ceilings and Monte Carlo oracles.
//! * [`advisory`] – conflict-graph coloring and the escalation state machine.
//! * [`harness`] – phase presets, configuration, results ledger and reports.

pub mod advisory;
pub mod analytics;
pub mod channel;
pub mod env;
pub mod error;
pub mod harness;
pub mod marl;
pub mod mobility;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    m0_count, obs_dim, state_dim, Action, EpisodeMetrics, GlobalState, JointAction, Observation,
    Partition, PoolLayout, TrafficClass, VehicleState, POWER_LEVELS_DBM,
};
