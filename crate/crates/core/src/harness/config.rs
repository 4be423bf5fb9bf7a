//! Flat TOML run configuration.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected.
//!
//! | key | default |
//! |---|---|
//! | `episode_len_ttis` | 100 |
//! | `gamma` | 0.99 (discount for both the environment and GAE) |
//! | `queue_horizon_ttis` | 10 |
//! | `delivery_threshold` | 0.5 |
//! | `fc_ghz` | 5.9 |
//! | `shadow_sigma_db` | 3.0 |
//! | `noise_dbm` | -114.0 |
//! | `pdr_anchor_lo_db` | 15.0 |
//! | `pdr_anchor_hi_db` | 25.0 |
//! | `comm_range_m` | 300.0 |
//! | `ema_decay` | 0.9 |
//! | `shadowing`, `fading` | true |
//! | `track_length_m` | 3000.0 |
//! | `lanes` | 2 |
//! | `lane_width_m` | 3.5 |
//! | `vehicle_length_m` | 4.5 |
//! | `step_period_s` | 0.1 |
//! | `spacing_jitter` | 0.25 |
//! | `initial_spacing_m` | 56.5 (0 spreads each lane evenly) |
//! | `idm_v0_mps`, `idm_headway_s`, `idm_a_max`, `idm_b_comf`, `idm_s0_m`, `idm_delta` | 33.3, 1.5, 1.4, 2.0, 2.0, 4.0 |
//! | `gae_lambda`, `clip_eps` | 0.95, 0.2 |
//! | `actor_lr`, `critic_lr` | 3e-4 |
//! | `grad_clip_norm` | 0.5 |
//! | `entropy_start`, `entropy_end`, `entropy_anneal_episodes` | 0.05, 0.001, 3000 |
//! | `epochs_per_update`, `value_loss_coef`, `adv_norm_eps` | 4, 0.5, 1e-8 |
//! | `actor_hidden`, `critic_hidden` | 128, 256 |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | 0.9, 0.999, 1e-8 |
//! | `rho_full` | 2.0 |

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::DEFAULT_RHO_FULL;
use crate::channel::ChannelConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::marl::TrainConfig;
use crate::mobility::{IdmParams, MobilityConfig};
use crate::types::PoolLayout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episode_len_ttis: usize,
    pub gamma: f64,
    pub queue_horizon_ttis: usize,
    pub delivery_threshold: f64,

    pub fc_ghz: f64,
    pub shadow_sigma_db: f64,
    pub noise_dbm: f64,
    pub pdr_anchor_lo_db: f64,
    pub pdr_anchor_hi_db: f64,
    pub comm_range_m: f64,
    pub ema_decay: f64,
    pub shadowing: bool,
    pub fading: bool,

    pub track_length_m: f64,
    pub lanes: u8,
    pub lane_width_m: f64,
    pub vehicle_length_m: f64,
    pub step_period_s: f64,
    pub spacing_jitter: f64,
    pub initial_spacing_m: f64,
    pub idm_v0_mps: f64,
    pub idm_headway_s: f64,
    pub idm_a_max: f64,
    pub idm_b_comf: f64,
    pub idm_s0_m: f64,
    pub idm_delta: f64,

    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip_norm: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub entropy_anneal_episodes: u64,
    pub epochs_per_update: usize,
    pub value_loss_coef: f64,
    pub adv_norm_eps: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub rho_full: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::new(1, PoolLayout::shared(1).expect("M = 1 is valid"));
        let (ch, mob, idm) = (env.channel, env.mobility, env.mobility.idm);
        let t = TrainConfig::default();
        Self {
            episode_len_ttis: env.episode_len_ttis,
            gamma: env.gamma,
            queue_horizon_ttis: env.queue_horizon_ttis,
            delivery_threshold: env.delivery_threshold,
            fc_ghz: ch.fc_ghz,
            shadow_sigma_db: ch.shadow_sigma_db,
            noise_dbm: ch.noise_dbm,
            pdr_anchor_lo_db: ch.pdr_anchor_lo_db,
            pdr_anchor_hi_db: ch.pdr_anchor_hi_db,
            comm_range_m: ch.comm_range_m,
            ema_decay: ch.ema_decay,
            shadowing: ch.shadowing,
            fading: ch.fading,
            track_length_m: mob.track_length_m,
            lanes: mob.lanes,
            lane_width_m: mob.lane_width_m,
            vehicle_length_m: mob.vehicle_length_m,
            step_period_s: mob.step_period_s,
            spacing_jitter: mob.spacing_jitter,
            initial_spacing_m: mob.initial_spacing_m,
            idm_v0_mps: idm.v0_mps,
            idm_headway_s: idm.headway_s,
            idm_a_max: idm.a_max,
            idm_b_comf: idm.b_comf,
            idm_s0_m: idm.s0_m,
            idm_delta: idm.delta,
            gae_lambda: t.gae_lambda,
            clip_eps: t.clip_eps,
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            grad_clip_norm: t.grad_clip_norm,
            entropy_start: t.entropy_start,
            entropy_end: t.entropy_end,
            entropy_anneal_episodes: t.entropy_anneal_episodes,
            epochs_per_update: t.epochs_per_update,
            value_loss_coef: t.value_loss_coef,
            adv_norm_eps: t.adv_norm_eps,
            actor_hidden: t.actor_hidden,
            critic_hidden: t.critic_hidden,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            rho_full: DEFAULT_RHO_FULL,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env(1, PoolLayout::shared(1)?).validate()?;
        self.train().validate()?;
        if !(self.rho_full > 1.0) {
            return Err(Error::InvalidConfig("rho_full must be > 1".into()));
        }
        Ok(())
    }

    pub fn env(&self, n: usize, pool: PoolLayout) -> EnvConfig {
        EnvConfig {
            n,
            pool,
            episode_len_ttis: self.episode_len_ttis,
            gamma: self.gamma,
            queue_horizon_ttis: self.queue_horizon_ttis,
            delivery_threshold: self.delivery_threshold,
            channel: ChannelConfig {
                fc_ghz: self.fc_ghz,
                shadow_sigma_db: self.shadow_sigma_db,
                noise_dbm: self.noise_dbm,
                pdr_anchor_lo_db: self.pdr_anchor_lo_db,
                pdr_anchor_hi_db: self.pdr_anchor_hi_db,
                comm_range_m: self.comm_range_m,
                ema_decay: self.ema_decay,
                shadowing: self.shadowing,
                fading: self.fading,
            },
            mobility: MobilityConfig {
                track_length_m: self.track_length_m,
                lanes: self.lanes,
                lane_width_m: self.lane_width_m,
                vehicle_length_m: self.vehicle_length_m,
                step_period_s: self.step_period_s,
                spacing_jitter: self.spacing_jitter,
                initial_spacing_m: self.initial_spacing_m,
                idm: IdmParams {
                    v0_mps: self.idm_v0_mps,
                    headway_s: self.idm_headway_s,
                    a_max: self.idm_a_max,
                    b_comf: self.idm_b_comf,
                    s0_m: self.idm_s0_m,
                    delta: self.idm_delta,
                },
            },
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip_eps: self.clip_eps,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            grad_clip_norm: self.grad_clip_norm,
            entropy_start: self.entropy_start,
            entropy_end: self.entropy_end,
            entropy_anneal_episodes: self.entropy_anneal_episodes,
            epochs_per_update: self.epochs_per_update,
            value_loss_coef: self.value_loss_coef,
            adv_norm_eps: self.adv_norm_eps,
            actor_hidden: self.actor_hidden,
            critic_hidden: self.critic_hidden,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
        }
    }
}

/// Hex SHA-256 of any serializable resolved configuration.
pub fn config_digest<T: Serialize>(resolved: &T) -> String {
    let bytes = serde_json::to_vec(resolved).expect("configuration serializes");
    hex::encode(Sha256::digest(bytes))
}
