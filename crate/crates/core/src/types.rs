//! Domain vocabulary shared by the simulator, learner and harness.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transmit power levels (dBm), indexed by power action in ascending order.
pub const POWER_LEVELS_DBM: [f64; 5] = [-10.0, 0.0, 10.0, 16.0, 23.0];

/// Number of discrete power actions.
pub const N_POWER_LEVELS: usize = POWER_LEVELS_DBM.len();

/// Leading kinematic features in an observation.
pub const KINEMATIC_FEATURES: usize = 3;
/// Trailing identity features in an observation.
pub const IDENTITY_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficClass {
    /// Safety-critical periodic BSM traffic.
    M0,
    /// Non-safety constant-bit-rate traffic.
    M1,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 2] = [TrafficClass::M0, TrafficClass::M1];

    pub fn index(self) -> usize {
        match self {
            TrafficClass::M0 => 0,
            TrafficClass::M1 => 1,
        }
    }

    pub fn bit(self) -> f64 {
        match self {
            TrafficClass::M0 => 0.0,
            TrafficClass::M1 => 1.0,
        }
    }
}

/// Direction of travel. The highway is one-directional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Heading {
    #[default]
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub class: TrafficClass,
    pub position_m: f64,
    pub lane: u8,
    pub speed_mps: f64,
    pub heading: Heading,
    pub chosen_subchannel: usize,
    pub chosen_power_dbm: f64,
    /// Per-subchannel EMA SINR estimate in dB; always `M` long.
    pub ema_sinr_db: Vec<f64>,
    pub queue_delay_norm: f64,
}

/// Number of M0 vehicles for a population of `n`; ids `0..m0_count(n)` are M0.
pub fn m0_count(n: usize) -> usize {
    (n / 2).max(1)
}

pub fn class_of(id: usize, n: usize) -> TrafficClass {
    if id < m0_count(n) {
        TrafficClass::M0
    } else {
        TrafficClass::M1
    }
}

pub fn obs_dim(m: usize) -> Result<usize> {
    if m < 1 {
        return Err(Error::InvalidConfig("subchannel count M must be >= 1".into()));
    }
    Ok(KINEMATIC_FEATURES + m + IDENTITY_FEATURES)
}

pub fn state_dim(n: usize, m: usize) -> Result<usize> {
    if n < 1 {
        return Err(Error::InvalidConfig("vehicle count N must be >= 1".into()));
    }
    Ok(n * obs_dim(m)? + m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Shared,
    /// The first `m0` subchannels form the M0 pool, the rest the M1 pool.
    Separated { m0: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolLayout {
    m: usize,
    partition: Partition,
}

impl PoolLayout {
    pub fn shared(m: usize) -> Result<Self> {
        Self::new(m, Partition::Shared)
    }

    pub fn separated(m: usize, m0: usize) -> Result<Self> {
        Self::new(m, Partition::Separated { m0 })
    }

    pub fn new(m: usize, partition: Partition) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidConfig("subchannel count M must be >= 1".into()));
        }
        if let Partition::Separated { m0 } = partition {
            if m0 < 1 || m0 >= m {
                return Err(Error::InvalidConfig(format!(
                    "M0 pool size must satisfy 1 <= M_m0 < M (got M_m0={m0}, M={m})"
                )));
            }
        }
        Ok(Self { m, partition })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn m0_pool(&self) -> Option<usize> {
        match self.partition {
            Partition::Shared => None,
            Partition::Separated { m0 } => Some(m0),
        }
    }

    pub fn slice(&self, class: TrafficClass) -> Range<usize> {
        match (self.partition, class) {
            (Partition::Shared, _) => 0..self.m,
            (Partition::Separated { m0 }, TrafficClass::M0) => 0..m0,
            (Partition::Separated { m0 }, TrafficClass::M1) => m0..self.m,
        }
    }

    pub fn slice_len(&self, class: TrafficClass) -> usize {
        self.slice(class).len()
    }
}

/// Local observation of one vehicle: kinematics, EMA SINR, identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The critic's view: every observation followed by per-subchannel occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState(pub Vec<f64>);

impl GlobalState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    /// Absolute subchannel index; must lie in the vehicle's pool slice.
    pub subchannel: usize,
    pub power_index: usize,
}

impl Action {
    pub fn power_dbm(&self) -> f64 {
        POWER_LEVELS_DBM[self.power_index.min(N_POWER_LEVELS - 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointAction(pub Vec<Action>);

impl JointAction {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub m0_pdr_mean: f64,
    pub m1_pdr_mean: f64,
    pub m0_collision_rate: f64,
    pub m0_within_pool_collision_rate: f64,
    pub m0_sinr_mean_db: f64,
    pub m0_pdr_p05_intra: f64,
    pub episode_index: u64,
    pub seed: u64,
}

impl EpisodeMetrics {
    /// Field-wise mean over episodes; `episode_index` becomes the count.
    pub fn aggregate(episodes: &[EpisodeMetrics], seed: u64) -> EpisodeMetrics {
        let n = episodes.len().max(1) as f64;
        let mean = |f: fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        EpisodeMetrics {
            m0_pdr_mean: mean(|e| e.m0_pdr_mean),
            m1_pdr_mean: mean(|e| e.m1_pdr_mean),
            m0_collision_rate: mean(|e| e.m0_collision_rate),
            m0_within_pool_collision_rate: mean(|e| e.m0_within_pool_collision_rate),
            m0_sinr_mean_db: mean(|e| e.m0_sinr_mean_db),
            m0_pdr_p05_intra: mean(|e| e.m0_pdr_p05_intra),
            episode_index: episodes.len() as u64,
            seed,
        }
    }
}
