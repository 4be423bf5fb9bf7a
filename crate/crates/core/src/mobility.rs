//! Highway mobility: IDM car-following on a two-lane ring road.
//!
//! Vehicles never change lanes. Each lane is a ring of circumference
//! `track_length_m`; a vehicle's leader is the nearest vehicle ahead in the
//! same lane, wrapping around the ring. A lone vehicle in a lane drives on a
//! free road.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{class_of, Heading, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub v0_mps: f64,
    pub headway_s: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub s0_m: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0_mps: 33.3,
            headway_s: 1.5,
            a_max: 1.4,
            b_comf: 2.0,
            s0_m: 2.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    /// IDM acceleration for a vehicle at `speed` with bumper gap `gap` to a
    /// leader closing at `approach_rate` (own speed minus leader speed).
    /// `gap = None` means free road.
    pub fn acceleration(&self, speed: f64, gap: Option<f64>, approach_rate: f64) -> f64 {
        let free = 1.0 - (speed / self.v0_mps).powf(self.delta);
        let interaction = match gap {
            None => 0.0,
            Some(s) => {
                let s = s.max(1e-3);
                let desired = self.s0_m
                    + (speed * self.headway_s
                        + speed * approach_rate / (2.0 * (self.a_max * self.b_comf).sqrt()))
                    .max(0.0);
                (desired / s).powi(2)
            }
        };
        self.a_max * (free - interaction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub track_length_m: f64,
    pub lanes: u8,
    pub lane_width_m: f64,
    pub vehicle_length_m: f64,
    pub step_period_s: f64,
    /// Fraction of the per-lane spacing by which initial positions jitter.
    pub spacing_jitter: f64,
    /// Same-lane spacing at t = 0, front to front. Zero spreads each lane
    /// evenly around the ring.
    pub initial_spacing_m: f64,
    pub idm: IdmParams,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            track_length_m: 3000.0,
            lanes: 2,
            lane_width_m: 3.5,
            vehicle_length_m: 4.5,
            step_period_s: 0.1,
            spacing_jitter: 0.25,
            initial_spacing_m: 56.5,
            idm: IdmParams::default(),
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        let idm = &self.idm;
        let positive = [
            ("track_length_m", self.track_length_m),
            ("step_period_s", self.step_period_s),
            ("idm.v0_mps", idm.v0_mps),
            ("idm.headway_s", idm.headway_s),
            ("idm.a_max", idm.a_max),
            ("idm.b_comf", idm.b_comf),
            ("idm.s0_m", idm.s0_m),
            ("idm.delta", idm.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0 (got {v})")));
            }
        }
        if self.lanes == 0 {
            return Err(Error::InvalidConfig("lanes must be >= 1".into()));
        }
        if !(self.initial_spacing_m >= 0.0 && self.initial_spacing_m.is_finite()) {
            return Err(Error::InvalidConfig("initial_spacing_m must be >= 0".into()));
        }
        if !(0.0..0.5).contains(&self.spacing_jitter) {
            return Err(Error::InvalidConfig("spacing_jitter must be in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Forward distance from `from` to `to` along the ring, in `[0, L)`.
    pub fn ahead_distance(&self, from: f64, to: f64) -> f64 {
        (to - from).rem_euclid(self.track_length_m)
    }

    /// Shortest along-road separation in `[0, L/2]`.
    pub fn ring_distance(&self, a: f64, b: f64) -> f64 {
        let d = self.ahead_distance(a, b);
        d.min(self.track_length_m - d)
    }

    /// Euclidean separation including lateral lane offset.
    pub fn separation(&self, a: &VehicleState, b: &VehicleState) -> f64 {
        let long = self.ring_distance(a.position_m, b.position_m);
        let lat = (a.lane as f64 - b.lane as f64) * self.lane_width_m;
        long.hypot(lat)
    }
}

/// Places `n` vehicles: uniform random lane each, then equal spacing per lane
/// (`initial_spacing_m`, capped at an even spread) from a shared random origin
/// plus a random lane offset, with uniform jitter of `spacing_jitter * spacing`.
/// Speeds start at `v0`. EMA vectors are sized to `m` subchannels and zeroed.
pub fn init_positions<R: Rng>(
    n: usize,
    m: usize,
    cfg: &MobilityConfig,
    rng: &mut R,
) -> Vec<VehicleState> {
    let lanes: Vec<u8> = (0..n).map(|_| rng.random_range(0..cfg.lanes)).collect();
    let mut positions = vec![0.0; n];
    let base = rng.random_range(0.0..cfg.track_length_m);
    for lane in 0..cfg.lanes {
        let members: Vec<usize> = (0..n).filter(|&i| lanes[i] == lane).collect();
        if members.is_empty() {
            continue;
        }
        let even = cfg.track_length_m / members.len() as f64;
        let spacing = if cfg.initial_spacing_m > 0.0 { cfg.initial_spacing_m.min(even) } else { even };
        let offset = base + rng.random_range(0.0..spacing);
        for (k, &i) in members.iter().enumerate() {
            let jitter = if cfg.spacing_jitter > 0.0 {
                rng.random_range(-cfg.spacing_jitter..cfg.spacing_jitter) * spacing
            } else {
                0.0
            };
            positions[i] = (offset + k as f64 * spacing + jitter).rem_euclid(cfg.track_length_m);
        }
    }
    (0..n)
        .map(|id| VehicleState {
            id,
            class: class_of(id, n),
            position_m: positions[id],
            lane: lanes[id],
            speed_mps: cfg.idm.v0_mps,
            heading: Heading::Forward,
            chosen_subchannel: 0,
            chosen_power_dbm: crate::types::POWER_LEVELS_DBM[0],
            ema_sinr_db: vec![0.0; m],
            queue_delay_norm: 0.0,
        })
        .collect()
}

/// `leaders[i]` is the index of the vehicle ahead of `i` in its lane, or
/// `None` if `i` is alone in the lane.
pub fn lane_leaders(states: &[VehicleState], cfg: &MobilityConfig) -> Vec<Option<usize>> {
    let mut leaders = vec![None; states.len()];
    for lane in 0..cfg.lanes {
        let mut members: Vec<usize> = (0..states.len())
            .filter(|&i| states[i].lane == lane)
            .collect();
        if members.len() < 2 {
            continue;
        }
        members.sort_by(|&a, &b| {
            states[a]
                .position_m
                .total_cmp(&states[b].position_m)
                .then(a.cmp(&b))
        });
        for (k, &i) in members.iter().enumerate() {
            leaders[i] = Some(members[(k + 1) % members.len()]);
        }
    }
    leaders
}

/// Bumper-to-bumper gap from a follower to its leader.
pub fn gap_to(follower: &VehicleState, leader: &VehicleState, cfg: &MobilityConfig) -> f64 {
    cfg.ahead_distance(follower.position_m, leader.position_m) - cfg.vehicle_length_m
}

/// Advances every vehicle by one step: IDM acceleration, semi-implicit Euler,
/// speeds clamped at zero, positions wrapped onto the ring.
pub fn step_mobility(states: &mut [VehicleState], cfg: &MobilityConfig) {
    let leaders = lane_leaders(states, cfg);
    let accel: Vec<f64> = states
        .iter()
        .enumerate()
        .map(|(i, v)| match leaders[i] {
            None => cfg.idm.acceleration(v.speed_mps, None, 0.0),
            Some(l) => {
                let lead = &states[l];
                cfg.idm.acceleration(
                    v.speed_mps,
                    Some(gap_to(v, lead, cfg)),
                    v.speed_mps - lead.speed_mps,
                )
            }
        })
        .collect();
    let dt = cfg.step_period_s;
    for (v, a) in states.iter_mut().zip(accel) {
        v.speed_mps = (v.speed_mps + a * dt).max(0.0);
        v.position_m = (v.position_m + v.speed_mps * dt).rem_euclid(cfg.track_length_m);
        if v.position_m >= cfg.track_length_m {
            v.position_m = 0.0;
        }
    }
}

/// Writes `t,id,lane,position,speed` rows for one snapshot.
pub fn write_trajectory_rows<W: Write>(
    out: &mut W,
    t_s: f64,
    states: &[VehicleState],
) -> std::io::Result<()> {
    for v in states {
        writeln!(
            out,
            "{:.3},{},{},{:.6},{:.6}",
            t_s, v.id, v.lane, v.position_m, v.speed_mps
        )?;
    }
    Ok(())
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,id,lane,position,speed";
